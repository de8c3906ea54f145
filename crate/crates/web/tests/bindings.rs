use qaxnet_web::{attention_cost, hamilton, hamilton_matrix_of, model_summary};

#[test]
fn unit_products() {
    assert_eq!(
        hamilton(&[0., 1., 0., 0.], &[0., 0., 1., 0.]).unwrap(),
        vec![0., 0., 0., 1.]
    );
    assert_eq!(
        hamilton(&[0., 0., 1., 0.], &[0., 1., 0., 0.]).unwrap(),
        vec![0., 0., 0., -1.]
    );
}

#[test]
fn matrix_times_vector_is_product() {
    let (p, q) = ([1., 2., 3., 4.], [-0.5, 0.25, 2., 1.]);
    let m = hamilton_matrix_of(&p).unwrap();
    let mq: Vec<f64> = (0..4).map(|r| (0..4).map(|c| m[4 * r + c] * q[c]).sum()).collect();
    assert_eq!(mq, hamilton(&p, &q).unwrap());
}

#[test]
fn cost_ratio() {
    let c = attention_cost(56, 64, 8).unwrap();
    assert_eq!(c[1] / c[0], 28.0);
}

#[test]
fn summary_totals() {
    let s = model_summary("axial", 26, false).unwrap();
    assert!(s.ends_with("layers: 26\nparams: 5936744\n"), "{s}");
}
