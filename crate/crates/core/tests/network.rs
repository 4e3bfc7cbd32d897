mod common;

use common::gradcheck;
use common::random_plane;
use proptest::prelude::*;
use shearlf::drst::drst_reconstruct;
use shearlf::nn::*;
use shearlf::ShearletSystem;

const GRAD_TOLERANCE: f64 = 1e-4;

fn assert_grad(r: gradcheck::GradReport) {
    assert!(r.checked > 0);
    assert!(r.max_rel < GRAD_TOLERANCE, "{}: relative error {:e}", r.name, r.max_rel);
}

#[test]
fn conv3_gradients() {
    assert_grad(gradcheck::conv_check(3));
}

#[test]
fn conv1_gradients() {
    assert_grad(gradcheck::conv_check(1));
}

#[test]
fn activation_gradients() {
    assert_grad(gradcheck::leaky_check());
}

#[test]
fn pooling_gradients() {
    assert_grad(gradcheck::pool_check());
}

#[test]
fn upsample_gradients() {
    assert_grad(gradcheck::upsample_check());
}

#[test]
fn concat_gradients() {
    assert_grad(gradcheck::concat_check());
}

#[test]
fn full_network_gradients() {
    assert_grad(gradcheck::unet_check());
}

#[test]
fn loss_gradients() {
    assert_grad(gradcheck::l1_check());
}

#[test]
fn gradients_through_fixed_transforms() {
    assert_grad(gradcheck::end_to_end_check());
}

/// Parameter count by instantiating every tensor.
fn enumerated(plan: &ChannelPlan) -> usize {
    NetParams::<f32>::zeros(plan).tensors().iter().map(|t| t.2.len()).sum()
}

#[test]
fn parameter_count_matches_enumeration() {
    let plan = ChannelPlan::standard(35);
    assert_eq!(plan.parameter_count(), 3_562_851);
    assert_eq!(enumerated(&plan), plan.parameter_count());
    let rel = (plan.parameter_count() as f64 - 3_618_959.0).abs() / 3_618_959.0;
    assert!(rel < 0.05);
    assert_eq!(enumerated(&ChannelPlan::tiny(35)), ChannelPlan::tiny(35).parameter_count());
}

#[test]
fn zero_final_layer_gives_identity() {
    let sys = ShearletSystem::new(128, 128, 4, 127).unwrap();
    let p = NetParams::<f32>::init(&ChannelPlan::tiny(35), 3).unwrap();
    let x = random_plane(128, 128, 4);
    let y = drst_reconstruct(&sys, &p, &x).unwrap();
    assert!(x.max_abs_diff(&y) < 1e-8);
}

#[test]
fn init_is_seeded() {
    let plan = ChannelPlan::tiny(5);
    let a = NetParams::<f32>::init(&plan, 1).unwrap();
    assert_eq!(a, NetParams::<f32>::init(&plan, 1).unwrap());
    assert_ne!(a, NetParams::<f32>::init(&plan, 2).unwrap());
    assert!(a.layers[8].weight.iter().all(|w| *w == 0.0));
}

#[test]
fn forward_rejects_bad_shapes() {
    let p = NetParams::<f64>::init(&ChannelPlan::tiny(3), 0).unwrap();
    assert!(unet_forward(&p, &Tensor4::zeros([1, 3, 24, 16]), None).is_err());
    assert!(unet_forward(&p, &Tensor4::zeros([1, 4, 16, 16]), None).is_err());
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let mut p = NetParams::<f32>::init(&ChannelPlan::tiny(35), 5).unwrap();
    let mut state = AdaMaxState::new(&p);
    let grads = NetParams::<f32>::init(&ChannelPlan::tiny(35), 6).unwrap();
    adamax_step(&mut p, &grads, &mut state, 1e-3).unwrap();
    save_checkpoint(&path, &p, Some(&state)).unwrap();
    let (q, s) = load_checkpoint(&path).unwrap();
    assert_eq!(p, q);
    assert_eq!(Some(state), s);

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
    assert!(load_checkpoint(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn adamax_first_step_moves_by_learning_rate() {
    let plan = ChannelPlan::tiny(2);
    let mut p = NetParams::<f64>::zeros(&plan);
    let mut g = NetParams::<f64>::zeros(&plan);
    g.layers[0].weight[0] = 0.25;
    g.layers[0].weight[1] = -4.0;
    let mut s = AdaMaxState::new(&p);
    adamax_step(&mut p, &g, &mut s, 1e-3).unwrap();
    assert!((p.layers[0].weight[0] + 1e-3).abs() < 1e-15);
    assert!((p.layers[0].weight[1] - 1e-3).abs() < 1e-15);
    assert_eq!(p.layers[0].weight[2], 0.0);
    assert!(adamax_step(&mut p, &g, &mut s, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn leaky_relu_is_piecewise_linear(v in proptest::collection::vec(-5.0f64..5.0, 1..64)) {
        let n = v.len();
        let x = Tensor4::from_vec([1, 1, 1, n], v.clone()).unwrap();
        let y = leaky_relu(&x);
        for (a, b) in v.iter().zip(y.data()) {
            let expect = if *a < 0.0 { 0.3 * a } else { *a };
            prop_assert_eq!(*b, expect);
        }
    }

    #[test]
    fn pool_picks_block_maximum(v in proptest::collection::vec(-5.0f64..5.0, 16)) {
        let x = Tensor4::from_vec([1, 1, 4, 4], v.clone()).unwrap();
        let (y, _) = maxpool2(&x).unwrap();
        for (o, out) in y.data().iter().enumerate() {
            let (br, bc) = (o / 2 * 2, o % 2 * 2);
            let m = [v[br * 4 + bc], v[br * 4 + bc + 1], v[(br + 1) * 4 + bc], v[(br + 1) * 4 + bc + 1]]
                .into_iter()
                .fold(f64::MIN, f64::max);
            prop_assert_eq!(*out, m);
        }
    }

    #[test]
    fn concat_then_split_round_trips(a in 1usize..4, b in 1usize..4, seed in 0u64..100) {
        let x = Tensor4::<f64>::from_fn([2, a, 3, 3], |i| (i as u64 * 7 + seed) as f64);
        let y = Tensor4::<f64>::from_fn([2, b, 3, 3], |i| -((i as u64 + seed) as f64));
        let (x2, y2) = split_channels(&concat_channels(&x, &y).unwrap(), a).unwrap();
        prop_assert_eq!(x, x2);
        prop_assert_eq!(y, y2);
    }
}
