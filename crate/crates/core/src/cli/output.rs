use std::io::Write;

use serde_json::Value;

/// Stdout wrapper that prints either a table-ish human rendering or the raw
/// JSON body.
pub struct Out<W: Write> {
    w: W,
    pub json: bool,
}

impl<W: Write> Out<W> {
    pub fn new(w: W, json: bool) -> Self {
        Self { w, json }
    }

    pub fn line(&mut self, s: impl AsRef<str>) {
        let _ = writeln!(self.w, "{}", s.as_ref());
    }

    /// Prints `v` in JSON mode, otherwise runs `human`.
    pub fn emit(&mut self, v: &Value, human: impl FnOnce(&mut Self)) {
        if self.json {
            let text = serde_json::to_string_pretty(v).unwrap_or_default();
            self.line(text);
        } else {
            human(self);
        }
    }

    pub fn flush(&mut self) {
        let _ = self.w.flush();
    }
}

pub fn print_table<W: Write>(out: &mut Out<W>, headers: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let render = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    out.line(render(headers.to_vec()));
    for row in rows {
        out.line(render(row.iter().map(String::as_str).collect()));
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        Value::Array(a) => a.iter().map(cell).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

pub fn topic_summary(v: &Value) -> String {
    format!(
        "topic {}: partitions {}, replication_factor {}, retention_ms {}, owner {}",
        cell(&v["name"]),
        cell(&v["partitions"]),
        cell(&v["replication_factor"]),
        cell(&v["retention_ms"]),
        cell(&v["owner"])
    )
}

pub fn describe_topic<W: Write>(out: &mut Out<W>, v: &Value) {
    out.line(topic_summary(v));
    let grants: Vec<String> = v["grants"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|g| match g {
            Value::Object(_) => format!("{}:{}", cell(&g["identity_id"]), cell(&g["permission"])),
            other => cell(other),
        })
        .collect();
    if !grants.is_empty() {
        out.line(format!("grants: {}", grants.join(" ")));
    }
    let rows: Vec<Vec<String>> = v["partition_info"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|p| {
            [
                "partition",
                "leader",
                "replica_brokers",
                "isr",
                "log_start",
                "high_watermark",
                "log_end",
            ]
            .iter()
            .map(|k| cell(&p[*k]))
            .collect()
        })
        .collect();
    print_table(
        out,
        &[
            "PARTITION",
            "LEADER",
            "REPLICAS",
            "ISR",
            "START",
            "HW",
            "END",
        ],
        &rows,
    );
}

pub fn trigger_table<W: Write>(out: &mut Out<W>, v: &Value) {
    let rows: Vec<Vec<String>> = v
        .as_array()
        .into_iter()
        .flatten()
        .map(|t| {
            let action = &t["spec"]["action"];
            let target = match action["kind"].as_str() {
                Some("WEBHOOK") => cell(&action["url"]),
                _ => format!("local:{}", cell(&action["name"])),
            };
            vec![
                cell(&t["spec"]["trigger_id"]),
                cell(&t["spec"]["topic"]),
                target,
                cell(&t["concurrency"]),
                cell(&t["lag"]),
            ]
        })
        .collect();
    print_table(
        out,
        &["TRIGGER", "TOPIC", "ACTION", "WORKERS", "LAG"],
        &rows,
    );
}
