use serde_json::Value;
use setransformer_demo::Demo;

#[test]
fn inspect_reports_normalized_weights() {
    let demo = Demo::build(3, 4).unwrap();
    assert_eq!(demo.num_samples(), 90);
    let d: Value = serde_json::from_str(&demo.inspect_inner(5).unwrap()).unwrap();
    let sum = |v: &Value| v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum::<f64>();
    assert!((sum(&d["probs"]) - 1.0).abs() < 1e-5);
    assert!((sum(&d["pool"]) - 1.0).abs() < 1e-5);
    assert_eq!(d["pool"].as_array().unwrap().len(), 32);
    assert_eq!(d["se_gate"].as_array().unwrap().len(), 16);
    let heads = d["attention"].as_array().unwrap();
    assert_eq!(heads.len(), 2);
    assert_eq!(heads[0].as_array().unwrap().len(), 32 * 32);
}

#[test]
fn training_lowers_loss_and_counts_epochs() {
    let mut demo = Demo::build(3, 1).unwrap();
    let trace: Value = serde_json::from_str(&demo.train_inner(4).unwrap()).unwrap();
    let recs = trace.as_array().unwrap();
    assert_eq!(recs.len(), 4);
    assert_eq!(demo.epoch(), 4);
    let first = recs[0]["train_loss"].as_f64().unwrap();
    let last = recs[3]["train_loss"].as_f64().unwrap();
    assert!(last < first, "{first} -> {last}");
    let more: Value = serde_json::from_str(&demo.train_inner(1).unwrap()).unwrap();
    assert_eq!(more[0]["epoch"], 4);
}

#[test]
fn window_json_has_three_axes() {
    let demo = Demo::build(4, 0).unwrap();
    let w: Value = serde_json::from_str(&demo.window(0).unwrap()).unwrap();
    let x = w["x"].as_array().unwrap();
    assert_eq!(x.len(), 32);
    assert!(x.iter().all(|p| p.as_array().unwrap().len() == 3));
    assert_eq!(w["label"], "class_00");
}

#[test]
fn same_seed_same_demo() {
    let mut a = Demo::build(3, 9).unwrap();
    let mut b = Demo::build(3, 9).unwrap();
    assert_eq!(a.train_inner(2).unwrap(), b.train_inner(2).unwrap());
    assert_eq!(a.inspect_inner(0).unwrap(), b.inspect_inner(0).unwrap());
}
