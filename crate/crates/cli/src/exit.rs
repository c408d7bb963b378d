use std::fmt;

/// Process exit statuses. These values are part of the CLI contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Failure = 1,
    Usage = 2,
    Input = 3,
    NonFinite = 4,
    MissingTimestep = 5,
    Verification = 6,
}

/// An error that already knows which exit status it maps to.
#[derive(Debug)]
pub struct Coded {
    pub exit: Exit,
    message: String,
}

impl Coded {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

pub fn classify(err: &anyhow::Error) -> Exit {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.exit;
        }
        if let Some(e) = cause.downcast_ref::<dpmfuse::Error>() {
            use dpmfuse::Error as E;
            return match e {
                E::NonFinite(_) => Exit::NonFinite,
                E::MissingLatent(_) => Exit::MissingTimestep,
                E::Io(_) => Exit::Failure,
                E::Json(_) | E::Csv(_) | E::Wav(_) | E::Format(_) => Exit::Input,
                _ => Exit::Usage,
            };
        }
    }
    Exit::Failure
}

pub fn ensure_finite(values: &[f64], what: &str) -> anyhow::Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Coded::new(Exit::NonFinite, format!("NaN or infinity in {what}")).into())
    }
}
