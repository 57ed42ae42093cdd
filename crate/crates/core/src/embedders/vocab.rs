/// Built-in vocabulary of the frozen toy text encoder.
pub const WORDS: &[&str] = &[
    // articles, prepositions, glue
    "a", "an", "the", "of", "in", "on", "at", "to", "with", "and", "or", "by", "for", "from", "near", "over",
    "under", "into", "onto", "next", "toward", "against", "behind", "beside", "between", "above", "below",
    "front", "its", "my", "one", "two", "some", "this", "that", "is", "are", "while", "very", "it",
    // prompt templates
    "photo", "rendering", "rendition", "picture", "image", "shot", "view", "close-up", "cropped", "clean",
    "dirty", "dark", "bright", "cool", "good", "nice", "small", "large", "big", "little", "simple", "close",
    // scene words
    "background", "backdrop", "surface", "scene", "wallpaper", "pattern", "frame", "tones", "placed",
    "resting", "showing", "surrounded", "sitting", "standing", "lying", "floating", "beach", "grass", "snow",
    "forest", "city", "street", "room", "kitchen", "garden", "water", "sky", "mountain", "desert", "park",
    "table", "floor", "wall", "window", "night", "day", "sunny", "sunset", "light", "shadow", "wooden",
    "colorful", "graffiti", "painting", "sketch", "drawing", "watercolor", "style", "art", "page", "book",
    "curious", "playful", "expression", "happy", "old", "new", "soft", "sharp", "blurry", "empty",
    // layout
    "upper", "lower", "left", "right", "top", "bottom", "center", "middle", "side", "corner",
    // patterns and colors
    "smooth", "gradient", "striped", "checkered", "dotted", "plain", "red", "orange", "yellow", "green",
    "teal", "blue", "purple", "pink", "brown", "gray", "grey", "white", "black", "gold", "silver",
    // supercategories
    "disc", "square", "triangle", "cross", "ring", "diamond", "dog", "cat", "mug", "cup", "bowl", "vase",
    "teapot", "bottle", "can", "candle", "clock", "backpack", "bag", "shoe", "sneaker", "boot", "hat",
    "toy", "teddy", "bear", "robot", "plush", "duck", "sloth", "monster", "car", "bike", "chair", "plant",
    "flower", "bird", "horse", "rabbit", "person", "glasses", "sunglasses", "lamp", "guitar", "statue",
];

pub const UNKNOWN: &str = "<unk>";
