use kronmark::landmarks::{HeatmapStack, LandmarkSet, Point, NUM_LANDMARKS};
use kronmark::net::*;
use kronmark::synth::{generate_specimen, make_heatmap_targets, GeneratorConfig};
use kronmark::tensor::{Tape, Tensor};
use kronmark::train::{image_input, record_loss};
use kronmark::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 16x16 input, channels 3-3-3-6 then 6, pools after layers 2 and 4.
fn tiny() -> KpfemConfig {
    let mut c = KpfemConfig::default();
    for (i, l) in c.layers.iter_mut().enumerate() {
        l.in_channels = match i {
            0..=2 => 3,
            _ => 6,
        };
        l.out_channels = if i < 2 { 3 } else { 6 };
        l.stride = 1;
        l.pool = matches!(i + 1, 2 | 4);
    }
    c.input_size = 16;
    c.heatmap_size = 8;
    c
}

fn random_input(seed: u64, size: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..3 * size * size).map(|_| rng.gen_range(-0.5..0.5)).collect();
    Tensor::from_f64(vec![3, size, size], &v).unwrap()
}

#[test]
fn default_layout() {
    let c = KpfemConfig::default();
    c.validate().unwrap();
    assert_eq!(c.feature_shape().unwrap(), (96, 20, 20));
    assert_eq!(KpfemConfig::full_resolution().feature_shape().unwrap(), (96, 20, 20));
    assert!(c.layers.iter().all(|l| l.n == 3 && l.kernel == 3));
    let costs = c.layer_costs().unwrap();
    assert_eq!(costs.len(), 14 + 2 + 2, "two projected skips and two heads");
    assert_eq!(costs[14].0, "skip2_4");
    let total = c.total_cost().unwrap();
    assert_eq!(total.param_count, costs.iter().map(|(_, c)| c.param_count).sum::<u64>());
    let net = LandmarkNet::<f32>::init(&c, 0).unwrap();
    assert_eq!(net.param_count() as u64, total.param_count);
}

#[test]
fn higher_order_shrinks_the_model() {
    let c = KpfemConfig::default();
    let dense = c.with_order(1).total_cost().unwrap();
    let kcl = c.total_cost().unwrap();
    let ratio = dense.param_count as f64 / kcl.param_count as f64;
    assert!((2.5..=3.0).contains(&ratio), "ratio {ratio}");
    assert!(kcl.flop_count > dense.flop_count, "the assembly term only adds FLOPs");
}

#[test]
fn config_validation() {
    let mut c = KpfemConfig::default();
    c.layers.pop();
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = KpfemConfig::default();
    c.layers[3].n = 5;
    assert!(c.validate().is_err());
    let mut c = KpfemConfig::default();
    c.skips.push((3, 4));
    assert!(c.validate().is_err());
    let mut c = KpfemConfig::default();
    c.layers[1].out_channels = 27;
    assert!(c.validate().is_err());
    let mut c = KpfemConfig::default();
    c.input_size = 318;
    assert!(c.validate().is_err(), "odd extent before a pool");
    assert_ne!(KpfemConfig::default().digest(), KpfemConfig::full_resolution().digest());
    assert_eq!(KpfemConfig::default().digest(), KpfemConfig::default().digest());
}

#[test]
fn forward_shapes_and_heads() {
    let c = KpfemConfig::default();
    let net = LandmarkNet::<f32>::init(&c, 3).unwrap();
    let rec = generate_specimen(1, 0, &GeneratorConfig::default()).unwrap();
    let x = image_input::<f32>(&rec.image);
    let f = net.kpfem_forward(&x).unwrap();
    assert_eq!(f.shape(), &[96, 20, 20]);
    let p = net.forward(&x).unwrap();
    assert_eq!(p.heatmaps.size(), 56);
    p.heatmaps.validate().unwrap();
    assert!(p.coords.within(320.0, 320.0));
    assert_eq!(net.llm_forward(&f).unwrap(), p);
    assert!(net.forward(&Tensor::zeros([3, 64, 64])).is_err());
}

#[test]
fn init_and_forward_are_deterministic() {
    let c = tiny();
    let a = LandmarkNet::<f64>::init(&c, 9).unwrap();
    assert_eq!(a, LandmarkNet::<f64>::init(&c, 9).unwrap());
    assert_ne!(a, LandmarkNet::<f64>::init(&c, 10).unwrap());
    let zero = Tensor::zeros([3, 16, 16]);
    let (p, q) = (a.forward(&zero).unwrap(), a.forward(&zero).unwrap());
    assert_eq!(p.heatmaps.data(), q.heatmaps.data());
    assert_eq!(p.coords, q.coords);
}

#[test]
fn removing_a_skip_changes_the_output() {
    let c = tiny();
    let net = LandmarkNet::<f64>::init(&c, 4).unwrap();
    let x = random_input(5, 16);
    let full = net.forward(&x).unwrap();
    for j in 0..c.skips.len() {
        let cut = net.without_skip(j);
        assert_eq!(cut.config().skips.len(), c.skips.len() - 1);
        let p = cut.forward(&x).unwrap();
        assert_ne!(p.heatmaps.data(), full.heatmaps.data(), "skip {j}");
    }
}

#[test]
fn tensor_names_line_up() {
    let net = LandmarkNet::<f32>::init(&tiny(), 0).unwrap();
    let names = net.tensor_names();
    assert_eq!(names.len(), net.tensors().len());
    assert_eq!(&names[..7], ["layer1.a0", "layer1.a1", "layer1.a2", "layer1.f0", "layer1.f1", "layer1.f2", "layer1.bias"]);
    assert!(names.iter().any(|n| n.starts_with("skip2_4.")));
    assert!(!names.iter().any(|n| n.starts_with("skip4_6.")), "equal channels need no projection");
    assert_eq!(&names[names.len() - 4..], ["heat.weight", "heat.bias", "coord.weight", "coord.bias"]);
}

fn targets(c: &KpfemConfig) -> (Tensor<f64>, Tensor<f64>) {
    let size = c.input_size as f64;
    let lm = LandmarkSet::new(std::array::from_fn(|i| Point::new(2.0 + i as f64, 3.0 + 0.8 * i as f64)));
    let h = make_heatmap_targets(&lm, 1.0, c.heatmap_size, size, size).unwrap();
    let g = c.heatmap_size;
    (
        Tensor::from_f64(vec![NUM_LANDMARKS, g, g], h.data()).unwrap(),
        Tensor::from_f64(vec![2 * NUM_LANDMARKS], &lm.normalized(size, size)).unwrap(),
    )
}

fn loss(net: &LandmarkNet<f64>, x: &Tensor<f64>, th: &Tensor<f64>, tc: &Tensor<f64>) -> f64 {
    let mut tape = Tape::new();
    let vars = net.record(&mut tape, false);
    let xv = tape.constant(x.clone());
    let out = net.forward_tape(&mut tape, &vars, xv).unwrap();
    let (l, _, _) = record_loss(&mut tape, out.heatmaps, out.coords, th.clone(), tc.clone()).unwrap();
    tape.value(l).data()[0]
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let c = tiny();
    let net = LandmarkNet::<f64>::init(&c, 12).unwrap();
    let x = random_input(13, 16);
    let (th, tc) = targets(&c);

    let mut tape = Tape::new();
    let vars = net.record(&mut tape, true);
    let xv = tape.constant(x.clone());
    let out = net.forward_tape(&mut tape, &vars, xv).unwrap();
    let (l, _, _) = record_loss(&mut tape, out.heatmaps, out.coords, th.clone(), tc.clone()).unwrap();
    let mut grads = tape.backward(l).unwrap();
    let analytic: Vec<Vec<f64>> = vars.all().into_iter().map(|v| grads.take(v).unwrap()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let h = 1e-6;
    let mut probes = 0;
    let mut worst = 0.0f64;
    for (k, g) in analytic.iter().enumerate() {
        for _ in 0..2 {
            let i = rng.gen_range(0..g.len());
            let mut plus = net.clone();
            plus.tensors_mut()[k].data_mut()[i] += h;
            let mut minus = net.clone();
            minus.tensors_mut()[k].data_mut()[i] -= h;
            let numeric = (loss(&plus, &x, &th, &tc) - loss(&minus, &x, &th, &tc)) / (2.0 * h);
            let rel = (numeric - g[i]).abs() / numeric.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(rel);
            probes += 1;
        }
    }
    assert!(probes >= 20);
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let c = tiny();
    let net = LandmarkNet::<f32>::init(&c, 21).unwrap();
    net.save(&path).unwrap();
    let back = LandmarkNet::<f32>::load(&path, &c).unwrap();
    assert_eq!(back, net);
    let other = c.with_order(1);
    assert!(matches!(LandmarkNet::<f32>::load(&path, &other), Err(Error::DigestMismatch { .. })));
}

#[test]
fn peak_decoding() {
    let g = 4;
    let mut data = vec![0.0; NUM_LANDMARKS * g * g];
    for c in 0..NUM_LANDMARKS {
        data[c * g * g + (c % g) * g + (c + 1) % g] = 1.0;
    }
    let h = HeatmapStack::new(g, data).unwrap();
    let peaks = decode_peak(&h, 40.0, 80.0);
    let refined = decode_refined(&h, 40.0, 80.0, REFINE_RADIUS);
    for c in 0..NUM_LANDMARKS {
        let want = Point::new(((c + 1) % g) as f64 * 10.0 + 5.0, (c % g) as f64 * 20.0 + 10.0);
        assert_eq!(peaks.points[c], want);
        assert_eq!(refined.points[c], want);
    }
}

#[test]
fn refinement_takes_the_local_centroid() {
    let g = 8;
    let mut data = vec![0.0; NUM_LANDMARKS * g * g];
    for c in 0..NUM_LANDMARKS {
        let ch = &mut data[c * g * g..(c + 1) * g * g];
        ch[2 * g + 2] = 0.4;
        ch[2 * g + 3] = 0.2;
        ch[7 * g + 7] = 0.4 - 1e-9;
        let rest: f64 = ch.iter().sum();
        ch[0] += 1.0 - rest;
    }
    let h = HeatmapStack::new(g, data).unwrap();
    let p = decode_refined(&h, 8.0, 8.0, 1).points[0];
    let w = 0.4 + 0.2;
    assert!((p.x - ((0.4 * 2.0 + 0.2 * 3.0) / w + 0.5)).abs() < 1e-9);
    assert!((p.y - 2.5).abs() < 1e-9);
    assert_eq!(decode_peak(&h, 8.0, 8.0).points[0], Point::new(2.5, 2.5));
}
