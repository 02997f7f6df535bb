use serde::{Deserialize, Serialize};

use super::Stage;
use crate::error::{Error, Result};

/// Scoring manual a dataset was annotated with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringStandard {
    /// Five stages W, N1, N2, N3, R.
    Aasm,
    /// Rechtschaffen & Kales: stages 3 and 4 are both slow-wave sleep.
    Rk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Stage(Stage),
    /// Movement, unknown or unscored epochs.
    Excluded,
}

impl Label {
    pub fn stage(self) -> Option<Stage> {
        match self {
            Label::Stage(s) => Some(s),
            Label::Excluded => None,
        }
    }
}

/// Maps a raw hypnogram label (EDF+ text such as `"Sleep stage 4"`, or a
/// bare code like `"2"`, `"R"`, `"N3"`) to a stage.
///
/// Stage 4 only exists under R&K and merges into N3. Movement and unknown
/// epochs map to [`Label::Excluded`].
pub fn map_label(raw: &str, standard: ScoringStandard) -> Result<Label> {
    let text = raw.trim();
    let lower = text.to_ascii_lowercase();
    let code = lower
        .strip_prefix("sleep stage")
        .or_else(|| lower.strip_prefix("stage"))
        .map(str::trim)
        .unwrap_or(&lower);
    let stage = match code {
        "w" | "wake" | "0" => Stage::W,
        "1" | "n1" => Stage::N1,
        "2" | "n2" => Stage::N2,
        "3" | "n3" => Stage::N3,
        "4" | "n4" if standard == ScoringStandard::Rk => Stage::N3,
        "r" | "rem" | "5" => Stage::Rem,
        "?" | "movement time" | "movement" | "mt" | "m" | "unknown" | "unscored" | "6" | "9" => {
            return Ok(Label::Excluded)
        }
        _ => return Err(Error::UnknownLabel(text.to_string())),
    };
    Ok(Label::Stage(stage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ScoringStandard::*;

    #[test]
    fn rk_stage_four_merges_into_n3() {
        assert_eq!(map_label("Sleep stage 4", Rk).unwrap(), Label::Stage(Stage::N3));
        assert_eq!(map_label("Sleep stage 3", Rk).unwrap(), Label::Stage(Stage::N3));
        assert!(map_label("Sleep stage 4", Aasm).is_err());
    }

    #[test]
    fn movement_and_unknown_are_excluded() {
        assert_eq!(map_label("Movement time", Rk).unwrap(), Label::Excluded);
        assert_eq!(map_label("Sleep stage ?", Rk).unwrap(), Label::Excluded);
        assert_eq!(map_label("Sleep stage ?", Aasm).unwrap(), Label::Excluded);
    }

    #[test]
    fn direct_mappings() {
        assert_eq!(map_label("Sleep stage R", Rk).unwrap(), Label::Stage(Stage::Rem));
        assert_eq!(map_label("Sleep stage W", Aasm).unwrap(), Label::Stage(Stage::W));
        assert_eq!(map_label("Sleep stage 1", Aasm).unwrap(), Label::Stage(Stage::N1));
        assert_eq!(map_label(" N2 ", Aasm).unwrap(), Label::Stage(Stage::N2));
        assert_eq!(map_label("REM", Aasm).unwrap(), Label::Stage(Stage::Rem));
    }

    #[test]
    fn unknown_text_is_reported() {
        let err = map_label("Lights off", Aasm).unwrap_err().to_string();
        assert!(err.contains("Lights off"), "{err}");
    }
}
