use super::*;
use crate::Error;

fn params1(name: &str, values: Vec<f64>) -> Parameters {
    let mut p = Parameters::new();
    p.insert(name, Tensor::vector(values).unwrap());
    p
}

fn half_sq_norm(t: &Tensor) -> Tensor {
    t.square().unwrap().sum_all().unwrap().scale(0.5).unwrap()
}

#[test]
fn relu_forward() {
    let t = Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(t.relu().unwrap().data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn logsumexp_of_equal_entries_is_log2() {
    let t = Tensor::vector(vec![0.0, 0.0]).unwrap();
    let y = t.logsumexp_last_axis().unwrap();
    assert!(y.shape().is_empty());
    assert!((y.item().unwrap() - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn logsumexp_is_stable_for_large_inputs() {
    let t = Tensor::vector(vec![1000.0, 1000.0]).unwrap();
    let y = t.logsumexp_last_axis().unwrap().item().unwrap();
    assert!((y - (1000.0 + 2f64.ln())).abs() < 1e-12);
}

#[test]
fn sq_euclidean_three_four_five() {
    let a = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
    let b = Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap();
    assert_eq!(a.sq_euclidean_rowwise(&b).unwrap().data(), &[25.0]);
}

#[test]
fn shape_mismatch_names_op() {
    let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
    let b = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
    let err = a.matmul(&b).unwrap_err();
    assert!(matches!(err, Error::Contract(ref m) if m.contains("matmul") && m.contains("[2, 3]")), "{err}");
    let c = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
    let d = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
    assert!(Tensor::concat_last_axis(&[&c, &d]).is_err());
    assert!(a.sq_euclidean_rowwise(&d).is_err());
}

#[test]
fn non_finite_output_is_numeric_error() {
    let t = Tensor::vector(vec![800.0]).unwrap();
    assert!(matches!(t.exp(), Err(Error::Numeric(_))));
    assert!(matches!(Tensor::vector(vec![f64::NAN]), Err(Error::Numeric(_))));
}

#[test]
fn grad_of_half_norm_is_identity() {
    let g = Graph::new();
    let p = params1("theta", vec![3.0, -2.0]).attach(&g);
    let loss = half_sq_norm(p.get("theta").unwrap());
    let grads = grad(&loss, &p, false).unwrap();
    assert_eq!(grads.get("theta").unwrap().data(), &[3.0, -2.0]);
}

#[test]
fn grad_of_relu_sum_uses_zero_subgradient() {
    let g = Graph::new();
    let p = params1("theta", vec![-1.0, 5.0]).attach(&g);
    let loss = p.get("theta").unwrap().relu().unwrap().sum_all().unwrap();
    let grads = grad(&loss, &p, false).unwrap();
    assert_eq!(grads.get("theta").unwrap().data(), &[0.0, 1.0]);

    let g = Graph::new();
    let p = params1("theta", vec![0.0]).attach(&g);
    let loss = p.get("theta").unwrap().relu().unwrap().sum_all().unwrap();
    assert_eq!(grad(&loss, &p, false).unwrap().get("theta").unwrap().data(), &[0.0]);
}

#[test]
fn grad_errors() {
    let g = Graph::new();
    let p = params1("theta", vec![1.0, 2.0]).attach(&g);
    let not_scalar = p.get("theta").unwrap().square().unwrap();
    assert!(matches!(grad(&not_scalar, &p, false), Err(Error::Contract(_))));

    let detached = params1("theta", vec![1.0, 2.0]);
    let loss = half_sq_norm(p.get("theta").unwrap());
    assert!(matches!(grad(&loss, &detached, false), Err(Error::Contract(_))));

    let other = Graph::new();
    let foreign = params1("theta", vec![1.0, 2.0]).attach(&other);
    assert!(matches!(grad(&loss, &foreign, false), Err(Error::Contract(_))));
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let g = Graph::new();
    let mut p = params1("a", vec![1.0, 2.0]);
    p.insert("b", Tensor::vector(vec![7.0]).unwrap());
    let p = p.attach(&g);
    let loss = half_sq_norm(p.get("a").unwrap());
    let grads = grad(&loss, &p, false).unwrap();
    grads.check_matches(&p).unwrap();
    assert_eq!(grads.get("b").unwrap().data(), &[0.0]);
}

#[test]
fn create_graph_gradients_stay_attached() {
    let g = Graph::new();
    let p = params1("theta", vec![0.3, -0.7]).attach(&g);
    let loss = p.get("theta").unwrap().sigmoid().unwrap().sum_all().unwrap();
    let first = grad(&loss, &p, true).unwrap();
    assert!(first.get("theta").unwrap().is_attached());
    let detached = grad(&loss, &p, false).unwrap();
    assert!(!detached.get("theta").unwrap().is_attached());
    assert!(first.get("theta").unwrap().bit_eq(detached.get("theta").unwrap()));
}

#[test]
fn hvp_of_diagonal_quadratic() {
    // loss = 1/2 theta^T diag(2, 3) theta  =>  H v = (2, 3) for v = (1, 1)
    let g = Graph::new();
    let p = params1("theta", vec![0.4, -1.1]).attach(&g);
    let a = Tensor::vector(vec![2.0, 3.0]).unwrap();
    let t = p.get("theta").unwrap();
    let loss = t.mul(&a).unwrap().mul(t).unwrap().sum_all().unwrap().scale(0.5).unwrap();
    let v: GradientMap = [("theta".to_string(), Tensor::vector(vec![1.0, 1.0]).unwrap())].into_iter().collect();
    let hv = hvp(&loss, &p, &v).unwrap();
    assert_eq!(hv.get("theta").unwrap().data(), &[2.0, 3.0]);

    let zero: GradientMap = [("theta".to_string(), Tensor::vector(vec![0.0, 0.0]).unwrap())].into_iter().collect();
    assert_eq!(hvp(&loss, &p, &zero).unwrap().get("theta").unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn hvp_of_linear_loss_is_zero() {
    let g = Graph::new();
    let p = params1("theta", vec![0.4, -1.1]).attach(&g);
    let loss = p.get("theta").unwrap().sum_all().unwrap();
    let v = GradientMap::zeros_like(&p);
    let hv = hvp(&loss, &p, &v).unwrap();
    assert_eq!(hv.get("theta").unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn hvp_rejects_mismatched_direction() {
    let g = Graph::new();
    let p = params1("theta", vec![0.4, -1.1]).attach(&g);
    let loss = half_sq_norm(p.get("theta").unwrap());
    let v: GradientMap = [("theta".to_string(), Tensor::vector(vec![1.0]).unwrap())].into_iter().collect();
    assert!(matches!(hvp(&loss, &p, &v), Err(Error::Contract(_))));
}

#[test]
fn finite_diff_examples() {
    let p = params1("theta", vec![1.0, 2.0]);
    let fd = finite_diff_grad(|q| half_sq_norm(q.get("theta").unwrap()).item(), &p, 1e-6).unwrap();
    let d = fd.get("theta").unwrap().data();
    assert!((d[0] - 1.0).abs() < 1e-9 && (d[1] - 2.0).abs() < 1e-9, "{d:?}");

    let fd = finite_diff_grad(|_| Ok(4.0), &p, 1e-6).unwrap();
    assert_eq!(fd.get("theta").unwrap().data(), &[0.0, 0.0]);

    let p = params1("theta", vec![0.0]);
    let fd = finite_diff_grad(|q| q.get("theta").unwrap().sigmoid()?.sum_all()?.item(), &p, 1e-6).unwrap();
    assert!((fd.get("theta").unwrap().data()[0] - 0.25).abs() < 1e-10);

    assert!(finite_diff_grad(|_| Ok(0.0), &p, 0.0).is_err());
    assert!(matches!(finite_diff_grad(|_| Ok(f64::NAN), &p, 1e-6), Err(Error::Numeric(_))));
}

#[test]
fn recording_does_not_change_values() {
    let x = Tensor::matrix(2, 3, vec![0.1, -0.5, 2.0, 1.5, -1.2, 0.3]).unwrap();
    let w = Tensor::matrix(3, 2, vec![0.7, -0.2, 0.05, 1.1, -0.9, 0.4]).unwrap();
    let run = |x: &Tensor, w: &Tensor| {
        let h = x.matmul(w).unwrap().sigmoid().unwrap();
        let d = h.sq_euclidean_rowwise(&h.relu().unwrap()).unwrap();
        d.neg().unwrap().logsumexp_last_axis().unwrap().sum_all().unwrap()
    };
    let plain = run(&x, &w);
    let g = Graph::new();
    let recorded = run(&g.watch(&x), &g.watch(&w));
    assert!(recorded.is_attached());
    assert!(!plain.is_attached());
    assert!(plain.bit_eq(&recorded));
}

#[test]
fn slice_and_concat_gradients() {
    let g = Graph::new();
    let p = params1("theta", vec![1.0, 2.0, 3.0, 4.0]).attach(&g);
    let t = p.get("theta").unwrap();
    let mid = t.slice_last_axis(1, 2).unwrap();
    let loss = Tensor::concat_last_axis(&[&mid, t]).unwrap().square().unwrap().sum_all().unwrap();
    let grads = grad(&loss, &p, false).unwrap();
    assert_eq!(grads.get("theta").unwrap().data(), &[2.0, 8.0, 12.0, 8.0]);
}
