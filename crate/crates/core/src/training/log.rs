use std::fmt::Write as _;

use crate::error::{contract, Error, Result};

pub const LOG_HEADER: &str = "episode,meta_loss,inner_loss,lr,val_accuracy";

/// One meta-iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub episode: u64,
    pub meta_loss: f64,
    /// Absent for episodic training.
    pub inner_loss: Option<f64>,
    pub lr: f64,
    pub val_accuracy: Option<f64>,
}

/// Records with strictly increasing episode indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    records: Vec<LogRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: LogRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.episode <= last.episode {
                return Err(contract(format!(
                    "log episode {} does not follow {}",
                    record.episode, last.episode
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.records.len() + 1));
        s.push_str(LOG_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{}", r.episode, r.meta_loss, opt(r.inner_loss), r.lr, opt(r.val_accuracy));
        }
        s
    }

    /// Parses `log.csv`; errors carry 1-based line numbers.
    pub fn from_csv(text: &str) -> Result<RunLog> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == LOG_HEADER => {}
            Some((_, h)) => return Err(Error::Parse { line: 1, msg: format!("expected header {LOG_HEADER:?}, got {h:?}") }),
            None => return Err(Error::Parse { line: 1, msg: "empty log".into() }),
        }
        let mut log = RunLog::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, got {}", fields.len())));
            }
            let num = |k: usize| -> Result<f64> {
                let v: f64 = fields[k].parse().map_err(|_| err(format!("bad number {:?}", fields[k])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(err(format!("non-finite value {:?}", fields[k])))
                }
            };
            let maybe = |k: usize| -> Result<Option<f64>> { if fields[k].is_empty() { Ok(None) } else { num(k).map(Some) } };
            let episode = fields[0].parse().map_err(|_| err(format!("bad episode index {:?}", fields[0])))?;
            let record = LogRecord { episode, meta_loss: num(1)?, inner_loss: maybe(2)?, lr: num(3)?, val_accuracy: maybe(4)? };
            log.push(record).map_err(|e| err(e.to_string()))?;
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(episode: u64) -> LogRecord {
        LogRecord { episode, meta_loss: 0.5, inner_loss: Some(0.25), lr: 1e-3, val_accuracy: None }
    }

    #[test]
    fn csv_round_trip() {
        let mut log = RunLog::new();
        log.push(rec(0)).unwrap();
        log.push(LogRecord { val_accuracy: Some(0.875), inner_loss: None, ..rec(3) }).unwrap();
        let text = log.to_csv();
        assert_eq!(text, "episode,meta_loss,inner_loss,lr,val_accuracy\n0,0.5,0.25,0.001,\n3,0.5,,0.001,0.875\n");
        assert_eq!(RunLog::from_csv(&text).unwrap(), log);
    }

    #[test]
    fn episodes_must_increase() {
        let mut log = RunLog::new();
        log.push(rec(2)).unwrap();
        assert!(log.push(rec(2)).is_err());
        assert!(log.push(rec(1)).is_err());
    }

    #[test]
    fn parse_errors_cite_line() {
        let text = format!("{LOG_HEADER}\n0,1,1,0.1,\n1,oops,1,0.1,\n");
        match RunLog::from_csv(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let short = format!("{LOG_HEADER}\n0,1,1\n");
        assert!(matches!(RunLog::from_csv(&short), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(RunLog::from_csv("a,b\n"), Err(Error::Parse { line: 1, .. })));
    }
}
