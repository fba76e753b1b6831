use std::fmt;

/// Process-level failure, one variant per exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    /// Schema or semantic configuration error (exit 2).
    Config(String),
    /// A hard computational cap was exceeded (exit 3).
    Cap(String),
    /// A numerical self-check failed (exit 4).
    Contract(String),
    /// Anything else, mostly I/O (exit 1).
    Other(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Cap(_) => 3,
            Failure::Contract(_) => 4,
        }
    }

    /// Classifies a library error raised while a stage runs.
    pub fn from_stage(stage: &str, e: ldpnet::Error) -> Self {
        use ldpnet::Error as E;
        let msg = format!("{stage}: {e}");
        if e.is_cap() {
            Failure::Cap(msg)
        } else {
            match e {
                E::BlowUp { .. } | E::NoConvergence { .. } | E::NotProbability { .. } => {
                    Failure::Contract(msg)
                }
                _ => Failure::Other(msg),
            }
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) | Failure::Cap(m) | Failure::Contract(m) | Failure::Other(m) => {
                f.write_str(m)
            }
        }
    }
}

impl std::error::Error for Failure {}
