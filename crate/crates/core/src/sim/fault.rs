//! Fault schedules: `<at_ms> <kind> <args>`, one event per line.
//!
//! ```text
//! # comments and blank lines are ignored
//! 30000 crash LM
//! 30100 recover LM
//! 5000 partition TR-LM LM-LC
//! 7000 heal
//! ```

use thiserror::Error;

use crate::ids::Role;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultKind {
    NodeCrash(Role),
    NodeRecover(Role),
    /// Undirected links to block.
    Partition(Vec<(Role, Role)>),
    Heal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultEvent {
    pub at_ms: u64,
    pub kind: FaultKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("fault schedule line {line}: {msg}")]
pub struct FaultParseError {
    pub line: usize,
    pub msg: String,
}

pub fn parse_schedule(text: &str) -> Result<Vec<FaultEvent>, FaultParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| FaultParseError { line: i + 1, msg };
        let mut words = line.split_whitespace();
        let at_ms = words.next().unwrap().parse::<u64>().map_err(|e| err(format!("time: {e}")))?;
        let kind = words.next().ok_or_else(|| err("missing kind".into()))?;
        let args: Vec<&str> = words.collect();
        let role = |s: Option<&&str>| -> Result<Role, FaultParseError> {
            s.ok_or_else(|| err("missing node".into()))?.parse::<Role>().map_err(|e| err(e.to_string()))
        };
        let kind = match kind.to_ascii_lowercase().as_str() {
            "crash" => FaultKind::NodeCrash(role(args.first())?),
            "recover" => FaultKind::NodeRecover(role(args.first())?),
            "heal" => FaultKind::Heal,
            "partition" => {
                let mut links = Vec::new();
                for a in &args {
                    let (x, y) = a.split_once('-').ok_or_else(|| err(format!("bad link `{a}`")))?;
                    links.push((role(Some(&x))?, role(Some(&y))?));
                }
                if links.is_empty() {
                    return Err(err("partition needs at least one link".into()));
                }
                FaultKind::Partition(links)
            }
            other => return Err(err(format!("unknown kind `{other}`"))),
        };
        out.push(FaultEvent { at_ms, kind });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_kind() {
        let s = "# lm dies\n30000 crash LM\n30100 recover lm\n\n5000 partition TR-LM LM-LC\n7000 heal\n";
        let ev = parse_schedule(s).unwrap();
        assert_eq!(ev.len(), 4);
        assert_eq!(ev[0], FaultEvent { at_ms: 30000, kind: FaultKind::NodeCrash(Role::Lm) });
        assert_eq!(ev[2].kind, FaultKind::Partition(vec![(Role::Tr, Role::Lm), (Role::Lm, Role::Lc)]));
        assert_eq!(ev[3].kind, FaultKind::Heal);
    }

    #[test]
    fn rejects_garbage() {
        assert_eq!(parse_schedule("10 explode TR").unwrap_err().line, 1);
        assert!(parse_schedule("x crash TR").is_err());
        assert!(parse_schedule("10 crash XX").is_err());
        assert!(parse_schedule("10 partition").is_err());
    }
}
