use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line in the input file, header included.
    pub line: u64,
    pub message: String,
}

/// Row removals of the KT1 preprocessing, in the order they are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Kt1Steps {
    pub duplicates: usize,
    pub missing_answers: usize,
    pub undefined_tags: usize,
    pub sparse_students: usize,
}

impl Kt1Steps {
    pub fn total(&self) -> usize {
        self.duplicates + self.missing_answers + self.undefined_tags + self.sparse_students
    }
}

/// `rows_in = rows_out + rows_rejected + steps.total()`
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub source: String,
    pub rows_in: usize,
    pub rows_out: usize,
    /// Rows that failed to parse.
    pub rows_rejected: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<Kt1Steps>,
    pub errors: Vec<RowError>,
}

/// Collects row errors and aborts once more than `max` have been seen.
#[derive(Debug)]
pub(crate) struct ErrorSink {
    pub errors: Vec<RowError>,
    max: Option<usize>,
    source: String,
}

impl ErrorSink {
    pub fn new(source: &str, max: Option<usize>) -> Self {
        Self { errors: Vec::new(), max, source: source.to_string() }
    }

    pub fn push(&mut self, line: u64, message: String) -> crate::error::AppResult<()> {
        self.errors.push(RowError { line, message });
        match self.max {
            Some(max) if self.errors.len() > max => {
                let first = &self.errors[0];
                Err(crate::error::AppError::Validation(format!(
                    "{}: {} bad row(s), more than --max-errors {max}; first at line {}: {}",
                    self.source,
                    self.errors.len(),
                    first.line,
                    first.message
                )))
            }
            _ => Ok(()),
        }
    }
}
