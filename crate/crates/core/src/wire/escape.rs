use thiserror::Error;

use super::{ESCAPE, ESCAPE_MASK, FLAG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EscapeError {
    #[error("escape byte at end of content")]
    DanglingEscape,
    #[error("unescaped frame flag at offset {0}")]
    UnexpectedFlag(usize),
}

pub fn escape(content: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(content.len() + content.len() / 8);
    escape_into(content, &mut out);
    out
}

pub(crate) fn escape_into(content: &[u8], out: &mut Vec<u8>) {
    for &b in content {
        if b == FLAG || b == ESCAPE {
            out.push(ESCAPE);
            out.push(b ^ ESCAPE_MASK);
        } else {
            out.push(b);
        }
    }
}

pub fn unescape(escaped: &[u8]) -> Result<Vec<u8>, EscapeError> {
    let mut out = Vec::with_capacity(escaped.len());
    let mut pending = false;
    for (i, &b) in escaped.iter().enumerate() {
        if b == FLAG {
            return Err(EscapeError::UnexpectedFlag(i));
        }
        if pending {
            out.push(b ^ ESCAPE_MASK);
            pending = false;
        } else if b == ESCAPE {
            pending = true;
        } else {
            out.push(b);
        }
    }
    if pending {
        return Err(EscapeError::DanglingEscape);
    }
    Ok(out)
}
