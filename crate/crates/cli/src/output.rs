use discover_core::canonical::to_canonical_string;
use serde_json::{Map, Value};

use crate::config::Format;

pub fn render(value: &Value, format: Format) -> String {
    match format {
        Format::Json => to_canonical_string(value).expect("json values serialize"),
        Format::Table => table(value),
    }
}

fn cell(value: &Value) -> String {
    match value {
        Value::Null => "-".to_string(),
        Value::String(s) => s.clone(),
        other => to_canonical_string(other).expect("json values serialize"),
    }
}

fn table(value: &Value) -> String {
    match value {
        Value::Array(items) if items.iter().all(Value::is_object) && !items.is_empty() => {
            let mut columns: Vec<&str> = Vec::new();
            for item in items {
                for key in item.as_object().into_iter().flat_map(Map::keys) {
                    if !columns.contains(&key.as_str()) {
                        columns.push(key);
                    }
                }
            }
            let header: Vec<String> = columns.iter().map(|c| c.to_string()).collect();
            let rows: Vec<Vec<String>> = items
                .iter()
                .map(|item| columns.iter().map(|c| item.get(*c).map_or_else(String::new, cell)).collect())
                .collect();
            aligned(std::iter::once(header).chain(rows).collect())
        }
        Value::Array(items) => items.iter().map(cell).collect::<Vec<_>>().join("\n"),
        Value::Object(map) => aligned(map.iter().map(|(k, v)| vec![k.clone(), cell(v)]).collect()),
        scalar => cell(scalar),
    }
}

fn aligned(rows: Vec<Vec<String>>) -> String {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..width)
        .map(|i| rows.iter().filter_map(|r| r.get(i)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    rows.iter()
        .map(|row| {
            let mut line = String::new();
            for (i, c) in row.iter().enumerate() {
                if i + 1 == row.len() {
                    line.push_str(c);
                } else {
                    line.push_str(&format!("{c:<w$}  ", w = widths[i]));
                }
            }
            line.trim_end().to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}
