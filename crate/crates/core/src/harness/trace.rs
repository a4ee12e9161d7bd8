use crate::error::{Error, Result};
use crate::eviction::TraceRow;

/// Binary retention map of one (layer, KV head): row `t` marks the original
/// positions held after chunk step `t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceMatrix {
    pub layer: usize,
    pub kv_head: usize,
    pub positions: usize,
    pub rows: Vec<Vec<u8>>,
}

impl TraceMatrix {
    pub fn row_sums(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&v| v as usize).sum())
            .collect()
    }

    pub fn csv_header(&self) -> String {
        let mut s = String::from("step");
        for p in 0..self.positions {
            s.push_str(&format!(",p{p}"));
        }
        s
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .enumerate()
            .map(|(t, r)| {
                let mut s = t.to_string();
                for v in r {
                    s.push(',');
                    s.push(if *v == 1 { '1' } else { '0' });
                }
                s
            })
            .collect()
    }
}

pub fn trace_retained(rows: &[TraceRow], layer: usize, kv_head: usize) -> Result<TraceMatrix> {
    let mine: Vec<&TraceRow> = rows
        .iter()
        .filter(|r| r.layer == layer && r.kv_head == kv_head)
        .collect();
    if mine.is_empty() {
        return Err(Error::config(format!(
            "no trace rows for layer {layer}, KV head {kv_head}"
        )));
    }
    let positions = mine.iter().map(|r| r.original_position).max().unwrap_or(0) + 1;
    let steps = mine.iter().map(|r| r.chunk_step).max().unwrap_or(0) + 1;
    let mut mat = vec![vec![0u8; positions]; steps];
    for r in mine.iter().filter(|r| r.retained) {
        mat[r.chunk_step][r.original_position] = 1;
    }
    Ok(TraceMatrix {
        layer,
        kv_head,
        positions,
        rows: mat,
    })
}
