use std::process::ExitCode;

fn main() -> ExitCode {
    let result = persona::cli::run_command(std::env::args_os().skip(1));
    let stream_err = result.exit_code != 0;
    for line in &result.summary {
        if stream_err {
            eprintln!("{line}");
        } else {
            println!("{line}");
        }
    }
    ExitCode::from(result.exit_code.clamp(0, 255) as u8)
}
