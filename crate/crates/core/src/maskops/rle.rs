//! Run-length text codec: `"{H}x{W}:"` followed by comma-separated run
//! lengths over the row-major scan, alternating background/foreground and
//! starting with background (a leading run may be 0).

use super::BitMask;
use crate::error::{Error, Result};

pub fn rle_encode(m: &BitMask) -> String {
    let mut runs = Vec::new();
    let mut current = 0u8;
    let mut len = 0usize;
    for &v in m.data() {
        if v == current {
            len += 1;
        } else {
            runs.push(len);
            current = v;
            len = 1;
        }
    }
    runs.push(len);

    let mut out = format!("{}x{}:", m.height(), m.width());
    for (i, run) in runs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&run.to_string());
    }
    out
}

pub fn rle_decode(s: &str) -> Result<BitMask> {
    let malformed = |why: &str| Error::MalformedRle(format!("{why} in {s:?}"));
    let (dims, body) = s.split_once(':').ok_or_else(|| malformed("missing ':'"))?;
    let (h, w) = dims.split_once('x').ok_or_else(|| malformed("missing 'x'"))?;
    let h: usize = h.parse().map_err(|_| malformed("bad height"))?;
    let w: usize = w.parse().map_err(|_| malformed("bad width"))?;
    if h == 0 || w == 0 {
        return Err(malformed("zero dimension"));
    }
    let total = h.checked_mul(w).ok_or_else(|| malformed("dimensions overflow"))?;

    let mut data = Vec::with_capacity(total);
    let mut value = 0u8;
    for (i, tok) in body.split(',').enumerate() {
        let run: usize = tok.trim().parse().map_err(|_| malformed("bad run length"))?;
        if run == 0 && i > 0 {
            return Err(malformed("zero-length run after the first"));
        }
        if data.len() + run > total {
            return Err(malformed("runs exceed mask size"));
        }
        data.extend(std::iter::repeat(value).take(run));
        value ^= 1;
    }
    if data.len() != total {
        return Err(malformed("runs do not cover the mask"));
    }
    BitMask::from_vec(h, w, data)
}
