//! Prints the tool schema document that remote backends consume.
//!
//! `cargo run --example tool_schema > schema/tools.json`

fn main() {
    let doc = campaign::tools::schema_document();
    println!("{}", serde_json::to_string_pretty(&doc).expect("schema serializes"));
}
