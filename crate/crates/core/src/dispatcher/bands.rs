use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetBand {
    Explore,
    Focus,
    Refine,
    Selective,
    Stop,
}

/// Band for `remaining` proposals: explore above 20, focus 11..=20,
/// refine 6..=10, selective 1..=5, stop at 0.
pub fn budget_band(remaining: u32) -> BudgetBand {
    match remaining {
        0 => BudgetBand::Stop,
        1..=5 => BudgetBand::Selective,
        6..=10 => BudgetBand::Refine,
        11..=20 => BudgetBand::Focus,
        _ => BudgetBand::Explore,
    }
}

impl BudgetBand {
    pub fn as_str(self) -> &'static str {
        match self {
            BudgetBand::Explore => "explore",
            BudgetBand::Focus => "focus",
            BudgetBand::Refine => "refine",
            BudgetBand::Selective => "selective",
            BudgetBand::Stop => "stop",
        }
    }

    /// Guidance line placed in the strategist's context.
    pub fn guidance(self) -> &'static str {
        match self {
            BudgetBand::Explore => "More than 20 proposals left: explore broadly, including risky directions.",
            BudgetBand::Focus => "11 to 20 proposals left: concentrate on the directions that have paid off.",
            BudgetBand::Refine => "6 to 10 proposals left: propose only refinements you are confident in.",
            BudgetBand::Selective => "1 to 5 proposals left: spend each one on the single most promising change.",
            BudgetBand::Stop => "No proposals left: do not propose. Cancel anything that cannot change the outcome.",
        }
    }
}

impl fmt::Display for BudgetBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        use BudgetBand::*;
        let got: Vec<_> = [25, 21, 20, 11, 10, 6, 5, 1, 0].map(budget_band).to_vec();
        assert_eq!(got, [Explore, Explore, Focus, Focus, Refine, Refine, Selective, Selective, Stop]);
    }
}
