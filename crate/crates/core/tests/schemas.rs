//! CLI JSON outputs checked against the schemas shipped in `docs/schemas`.

use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

/// The subset of JSON Schema the shipped schemas use.
fn validate(schema: &Value, root: &Value, v: &Value, at: &str) -> Result<(), String> {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        let name = r.strip_prefix("#/$defs/").ok_or_else(|| format!("unsupported $ref {r}"))?;
        return validate(&root["$defs"][name], root, v, at);
    }
    if let Some(alts) = schema.get("oneOf").and_then(Value::as_array) {
        let hits = alts.iter().filter(|s| validate(s, root, v, at).is_ok()).count();
        return if hits == 1 { Ok(()) } else { Err(format!("{at}: {hits} oneOf branches match")) };
    }
    if let Some(choices) = schema.get("enum").and_then(Value::as_array) {
        if !choices.contains(v) {
            return Err(format!("{at}: {v} not in enum"));
        }
    }
    if let Some(t) = schema.get("type").and_then(Value::as_str) {
        let ok = match t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "integer" => v.is_u64() || v.is_i64(),
            "number" => v.is_number(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            _ => return Err(format!("unsupported type {t}")),
        };
        if !ok {
            return Err(format!("{at}: expected {t}, got {v}"));
        }
    }
    if let Some(x) = v.as_f64() {
        let bound = |k: &str| schema.get(k).and_then(Value::as_f64);
        if bound("minimum").is_some_and(|m| x < m)
            || bound("maximum").is_some_and(|m| x > m)
            || bound("exclusiveMinimum").is_some_and(|m| x <= m)
        {
            return Err(format!("{at}: {x} out of range"));
        }
    }
    if let Some(obj) = v.as_object() {
        for k in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let k = k.as_str().unwrap();
            if !obj.contains_key(k) {
                return Err(format!("{at}: missing `{k}`"));
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, val) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(s) => validate(s, root, val, &format!("{at}.{k}"))?,
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{at}: unexpected `{k}`"))
                }
                None => {}
            }
        }
    }
    if let Some(items) = v.as_array() {
        let count = |k: &str| schema.get(k).and_then(Value::as_u64);
        if count("minItems").is_some_and(|m| (items.len() as u64) < m)
            || count("maxItems").is_some_and(|m| items.len() as u64 > m)
        {
            return Err(format!("{at}: {} items", items.len()));
        }
        if let Some(s) = schema.get("items") {
            for (i, it) in items.iter().enumerate() {
                validate(s, root, it, &format!("{at}[{i}]"))?;
            }
        }
    }
    Ok(())
}

fn check(schema_file: &str, doc: &Path) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(schema_file);
    let schema: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let v: Value = serde_json::from_str(&fs::read_to_string(doc).unwrap()).unwrap();
    if let Err(e) = validate(&schema, &schema, &v, "$") {
        panic!("{} violates {schema_file}: {e}", doc.display());
    }
}

fn run(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_defect-forge")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cli_outputs_match_the_documented_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    fs::write(p("spec.txt"), "width = 64\nheight = 64\narea_fraction = 0.08\n").unwrap();
    fs::write(
        p("cfg.txt"),
        "working_size = 64\nscales = 64\nepochs = 1\nstage1.patches_per_image = 2\nstage2.patches_per_image = 1\n",
    )
    .unwrap();
    run(&["synth", "--spec", &p("spec.txt"), "--count", "12", "--out", &p("data")]);
    run(&["train", "--data", &p("data"), "--config", &p("cfg.txt"), "--out", &p("m.ckpt")]);
    for skip in [false, true] {
        let out = p(if skip { "inspect_skip" } else { "inspect" });
        let mut args = vec!["inspect", "--image", &*format!("{}/images/syn_00001.png", p("data")), "--checkpoint", &*p("m.ckpt"), "--out", &out]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        if skip {
            args.push("--skip-stage1".into());
        }
        run(&args.iter().map(String::as_str).collect::<Vec<_>>());
        check("inspection.schema.json", &Path::new(&out).join("syn_00001.json"));
    }
    run(&["eval", "--data", &p("data"), "--checkpoint", &p("m.ckpt"), "--sweep", "--out", &p("eval")]);
    check("eval-report.schema.json", &dir.path().join("eval/report.json"));
    check("sweep.schema.json", &dir.path().join("eval/sweep.json"));
}

#[test]
fn validator_rejects_bad_documents() {
    let schema: Value = serde_json::json!({
        "type": "object", "required": ["a"], "additionalProperties": false,
        "properties": { "a": { "type": "number", "minimum": 0, "maximum": 1 } }
    });
    assert!(validate(&schema, &schema, &serde_json::json!({"a": 0.5}), "$").is_ok());
    assert!(validate(&schema, &schema, &serde_json::json!({"a": 2}), "$").is_err());
    assert!(validate(&schema, &schema, &serde_json::json!({}), "$").is_err());
    assert!(validate(&schema, &schema, &serde_json::json!({"a": 0, "b": 1}), "$").is_err());
}
