//! Prompt templates sent to the remote stages.

pub const IMAGE_CAPTION_PROMPT: &str = "Please provide a one-sentence description for this image.";

pub const REGION_CAPTION_PROMPT: &str = "I will provide you with a short phrase description of an object and its image. You need to rewrite this short phrase description to a one sentence description by adding more details about this object based on the image. The rewritten description can only focus on this object according to the original description and should also be a one-sentence description. The original short phrase description is:";

pub const VERIFY_REWRITE_PROMPT: &str = "I will provide you with a one-sentence description of an object, and the category name of that object. Based on these two pieces of information, write a referring description of the object. This description should capture the most important and distinguishing features of the object, and should not describe anything that doesn't exist in the description I've provided. Note that the referring object should be the category name provided. The rewritten referring description should be more than 5 words but less than 10 words. The referring description should be as short and concise as possible, without commas. Directly output the answer.";

pub fn region_caption_prompt(phrase: &str) -> String {
    format!("{REGION_CAPTION_PROMPT} {phrase}")
}

pub fn verify_rewrite_prompt(caption: &str, phrase: &str) -> String {
    format!("{VERIFY_REWRITE_PROMPT}\nDescription: {caption}\nCategory name: {phrase}")
}
