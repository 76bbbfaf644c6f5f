//! Deterministic JSON output shared by the IR, plan manifest, and reports.

use serde::Serialize;

/// Serialize with sorted object keys, pretty-printed, trailing newline.
///
/// All file artifacts go through this so that identical inputs produce
/// byte-identical outputs.
pub(crate) fn to_sorted_pretty<T: Serialize>(value: &T) -> String {
    // Round-tripping through Value sorts map keys (serde_json's default
    // Map is a BTreeMap).
    let value = serde_json::to_value(value).expect("in-memory serialization cannot fail");
    let mut text = serde_json::to_string_pretty(&value).expect("valid JSON value");
    text.push('\n');
    text
}
