//! Prompt texts for the two inpainting stages.

use serde::{Deserialize, Serialize};

/// Placeholder replaced by the template name in the positive prompt.
pub const TEMPLATE_SLOT: &str = "[TEMPLATE NAME]";

pub const POSITIVE_TEMPLATE: &str = "[TEMPLATE NAME], hand, realskin, photorealistic, RAW photo, best quality, realistic, photo-realistic, masterpiece, an extremely delicate and beautiful, extremely detailed, 2k wallpaper, Amazing, finely detailed, 8k wallpaper, huge filesize, ultra-detailed, high-res, and extremely detailed.";

pub const NEGATIVE_PROMPT: &str = "deformed, EasyNegative, paintings, sketches, (worst quality:2), (low quality:2), (normal quality:2), low-res, normal quality, and (monochrome).";

pub const INSTRUCTION: &str = "Turn the deformed hand into normal";

pub const INSTRUCTION_VARIANTS: [&str; 50] = [
    "Transform the distorted hand into a regular shape",
    "Convert the abnormal hand to a normal one",
    "Change the misshapen hand into a standard form",
    "Modify the irregular hand into a typical shape",
    "Alter the twisted hand to appear normal",
    "Make the malformed hand look ordinary",
    "Adjust the deformed hand to a normal appearance",
    "Correct the unusual hand to a conventional form",
    "Revise the warped hand into a normal state",
    "Restore the irregular hand to a standard look",
    "Reshape the disfigured hand into a normal one",
    "Reform the abnormal hand into a regular shape",
    "Remodel the distorted hand to look normal",
    "Renovate the twisted hand into a standard appearance",
    "Recondition the misshapen hand into a normal state",
    "Refashion the deformed hand into a typical form",
    "Reconfigure the irregular hand to appear normal",
    "Recast the abnormal hand into a conventional shape",
    "Realign the distorted hand to a normal look",
    "Reconstruct the twisted hand into a standard form",
    "Normalize the deformed hand's appearance",
    "Rehabilitate the irregular hand to normality",
    "Refine the misshapen hand into a standard state",
    "Reorient the abnormal hand to appear normal",
    "Morph the distorted hand into a regular shape",
    "Convert the warped hand into a normal appearance",
    "Revamp the misshapen hand into a typical form",
    "Reinvent the deformed hand's look to normal",
    "Reengineer the twisted hand into a conventional shape",
    "Remake the abnormal hand into a standard form",
    "Resculpt the irregular hand into a normal look",
    "Rebuild the distorted hand to a normal state",
    "Revitalize the twisted hand into a typical shape",
    "Rework the misshapen hand to appear normal",
    "Redesign the deformed hand into a regular form",
    "Redo the abnormal hand to a standard appearance",
    "Recreate the distorted hand into a normal state",
    "Redefine the twisted hand into a typical look",
    "Reestablish the misshapen hand as normal",
    "Refurbish the irregular hand into a conventional shape",
    "Remold the deformed hand to a standard look",
    "Reawaken the abnormal hand to normality",
    "Retool the distorted hand into a regular shape",
    "Refit the twisted hand to a normal appearance",
    "Reimagine the misshapen hand into a typical form",
    "Resurrect the deformed hand into a conventional look",
    "Reenergize the irregular hand to a standard state",
    "Revise the abnormal hand to appear normal",
    "Rejuvenate the distorted hand into a regular form",
    "Reinvigorate the twisted hand to a normal state",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub positive_template: String,
    pub negative: String,
    pub instruction: String,
    pub instruction_variants: Vec<String>,
}

impl Default for PromptBundle {
    fn default() -> Self {
        Self {
            positive_template: POSITIVE_TEMPLATE.to_string(),
            negative: NEGATIVE_PROMPT.to_string(),
            instruction: INSTRUCTION.to_string(),
            instruction_variants: INSTRUCTION_VARIANTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl PromptBundle {
    pub fn validate(&self) -> Result<(), String> {
        let slots = self.positive_template.matches(TEMPLATE_SLOT).count();
        if slots != 1 {
            return Err(format!(
                "positive prompt must contain `{TEMPLATE_SLOT}` exactly once, found {slots}"
            ));
        }
        if self.instruction_variants.len() != INSTRUCTION_VARIANTS.len() {
            return Err(format!(
                "expected {} instruction variants, found {}",
                INSTRUCTION_VARIANTS.len(),
                self.instruction_variants.len()
            ));
        }
        if self.instruction.trim().is_empty() {
            return Err("instruction must be non-empty".into());
        }
        Ok(())
    }

    pub fn positive_for(&self, template_name: &str) -> String {
        self.positive_template.replacen(TEMPLATE_SLOT, template_name, 1)
    }

    /// The default instruction, or the numbered variant when one is chosen.
    pub fn instruction_for(&self, variant: Option<usize>) -> Option<&str> {
        match variant {
            None => Some(&self.instruction),
            Some(i) => self.instruction_variants.get(i).map(String::as_str),
        }
    }
}
