use std::fmt;
use std::io;
use std::path::Path;

use flmm_core::FlmmError;
use flmm_surrogate::SurrogateError;
use serde_json::{json, Value};

/// Error category, which fixes the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Validation,
    Numerical,
    Io,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Validation => 2,
            Category::Numerical => 3,
            Category::Io => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub category: Category,
    pub code: &'static str,
    pub message: String,
    pub context: Value,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(category: Category, code: &'static str, message: impl Into<String>, context: Value) -> Self {
        Self {
            category,
            code,
            message: message.into(),
            context,
        }
    }

    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        Self::new(Category::Validation, "invalid_config", message, json!({ "field": field }))
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        Self::new(
            Category::Io,
            "io",
            err.to_string(),
            json!({ "path": path.display().to_string() }),
        )
    }

    pub fn internal(what: &str) -> Self {
        Self::new(Category::Numerical, "internal", what, Value::Null)
    }

    pub fn exit_code(&self) -> i32 {
        self.category.exit_code()
    }

    /// The `{code, message, context}` object written to stderr.
    pub fn to_json(&self) -> Value {
        json!({ "code": self.code, "message": self.message, "context": self.context })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<FlmmError> for CliError {
    fn from(e: FlmmError) -> Self {
        let message = e.to_string();
        match e {
            FlmmError::InvalidParams { name, .. } => {
                Self::new(Category::Validation, "invalid_params", message, json!({ "field": name }))
            }
            FlmmError::DegenerateExpiry { tau, sigma } => Self::new(
                Category::Numerical,
                "degenerate_expiry",
                message,
                json!({ "tau": tau, "sigma": sigma }),
            ),
            FlmmError::Regularity { t, s1, s2, denom, delta0 } => Self::new(
                Category::Numerical,
                "regularity",
                message,
                json!({ "t": t, "s1": s1, "s2": s2, "denom": denom, "delta0": delta0 }),
            ),
            FlmmError::NonPositivePrice { step, s1, s2 } => Self::new(
                Category::Numerical,
                "nonpositive_price",
                message,
                json!({ "step": step, "s1": s1, "s2": s2 }),
            ),
            FlmmError::AllPathsDiscarded { n_paths } => Self::new(
                Category::Numerical,
                "all_paths_discarded",
                message,
                json!({ "n_paths": n_paths }),
            ),
        }
    }
}

impl From<SurrogateError> for CliError {
    fn from(e: SurrogateError) -> Self {
        let message = e.to_string();
        match e {
            SurrogateError::InvalidConfig { name, .. } => {
                Self::new(Category::Validation, "invalid_config", message, json!({ "field": name }))
            }
            SurrogateError::Shape(_) => Self::new(Category::Validation, "shape", message, Value::Null),
            SurrogateError::Empty(what) => Self::new(Category::Validation, "empty", message, json!({ "what": what })),
            SurrogateError::Io { path, .. } => {
                Self::new(Category::Io, "io", message, json!({ "path": path.display().to_string() }))
            }
            SurrogateError::Corrupt { path, .. } => {
                Self::new(Category::Io, "corrupt", message, json!({ "path": path.display().to_string() }))
            }
            SurrogateError::Version { path, found, expected } => Self::new(
                Category::Io,
                "version",
                message,
                json!({ "path": path.display().to_string(), "found": found, "expected": expected }),
            ),
            SurrogateError::Diverged { epoch, loss } => Self::new(
                Category::Numerical,
                "diverged",
                message,
                json!({ "epoch": epoch, "loss": loss.to_string() }),
            ),
            SurrogateError::Engine(e) => e.into(),
        }
    }
}
