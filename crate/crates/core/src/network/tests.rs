use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use std::path::Path;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: Shape, seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

/// Runs a block forward with its parameters bound as constants.
fn apply<Q>(
    x: &Tensor,
    bind: impl FnOnce(&mut Graph) -> Q,
    f: impl FnOnce(&mut Graph, Var, &Q) -> Result<Var>,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let q = bind(&mut g);
    let xv = g.constant(x.clone());
    let y = f(&mut g, xv, &q)?;
    Ok(g.value(y).clone())
}

// --- straight-line oracles, written against raw indices ---

fn conv_ref(x: &Tensor, c: &Conv<Tensor>, pad: usize, groups: usize) -> Tensor {
    let (xs, ws) = (x.shape(), c.weight.shape());
    let (cin_g, cout_g) = (xs.channels / groups, ws.batch / groups);
    Tensor::from_fn(Shape::new(xs.batch, ws.batch, xs.height, xs.width), |b, o, y, z| {
        let grp = o / cout_g;
        let mut acc = c.bias.at(0, o, 0, 0);
        for i in 0..cin_g {
            for ky in 0..ws.height {
                for kx in 0..ws.width {
                    let (yy, xx) = ((y + ky) as isize - pad as isize, (z + kx) as isize - pad as isize);
                    if yy >= 0 && xx >= 0 && (yy as usize) < xs.height && (xx as usize) < xs.width {
                        acc += c.weight.at(o, i, ky, kx) * x.at(b, grp * cin_g + i, yy as usize, xx as usize);
                    }
                }
            }
        }
        acc
    })
}

fn leaky(t: &Tensor, s: f64) -> Tensor {
    t.map(|v| if v > 0.0 { v } else { s * v })
}

fn sigmoid(t: &Tensor) -> Tensor {
    t.map(|v| 1.0 / (1.0 + (-v).exp()))
}

fn gap(t: &Tensor) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.batch, s.channels, 1, 1), |b, c, _, _| {
        let mut acc = 0.0;
        for y in 0..s.height {
            for x in 0..s.width {
                acc += t.at(b, c, y, x);
            }
        }
        acc / (s.height * s.width) as f64
    })
}

fn channel_scale(t: &Tensor, w: &Tensor) -> Tensor {
    Tensor::from_fn(t.shape(), |b, c, y, x| t.at(b, c, y, x) * w.at(b, c, 0, 0))
}

fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    a.zip_map(b, |x, y| x * y).unwrap()
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    a.zip_map(b, |x, y| x + y).unwrap()
}

fn dance_oracle(x: &Tensor, p: &DanceParams<Tensor>) -> Tensor {
    let c = x.shape().channels;
    let z0 = conv_ref(x, &p.noise_dw, 1, c);
    let z1 = conv_ref(&leaky(&z0, p.slope), &p.noise_pw, 0, 1);
    let m = sigmoid(&z1);
    let xden = mul(x, &m);
    let f0 = leaky(&conv_ref(&xden, &p.dark1, 1, 1), p.slope);
    let fdark = conv_ref(&f0, &p.dark2, 1, 1);
    let s = gap(&fdark);
    let w = sigmoid(&conv_ref(&leaky(&conv_ref(&s, &p.ca_reduce, 0, 1), p.slope), &p.ca_expand, 0, 1));
    add(&xden, &channel_scale(&fdark, &w))
}

fn se_oracle(x: &Tensor, p: &SeParams<Tensor>) -> Tensor {
    let h = conv_ref(&gap(x), &p.fc1, 0, 1).map(|v| v.max(0.0));
    let w = conv_ref(&h, &p.fc2, 0, 1).map(|v| 1.0 + v.tanh());
    channel_scale(x, &w)
}


fn rand_params<T>(p: &T, map: impl FnOnce(&T, &mut dyn FnMut(&Tensor) -> Tensor) -> T, seed: u64) -> T {
    let mut r = rng(seed);
    map(p, &mut |t| Tensor::uniform(t.shape(), -0.5, 0.5, &mut r))
}

macro_rules! constants {
    ($p:expr) => {
        |g: &mut Graph| $p.map(&mut |t: &Tensor| g.constant(t.clone()))
    };
}

fn dance(x: &Tensor, p: &DanceParams<Tensor>) -> Result<Tensor> {
    apply(x, constants!(p), |g, x, q| dance_forward(g, x, q))
}

fn iel(x: &Tensor, p: &IelParams<Tensor>) -> Result<Tensor> {
    apply(x, constants!(p), |g, x, q| iel_forward(g, x, q))
}

fn se(x: &Tensor, p: &SeParams<Tensor>) -> Result<Tensor> {
    apply(x, constants!(p), |g, x, q| se_forward(g, x, q))
}

fn cab(x: &Tensor, p: &CabParams<Tensor>) -> Result<Tensor> {
    apply(x, constants!(p), |g, x, q| cab_forward(g, x, q))
}

fn lca(x: &Tensor, p: &LcaParams<Tensor>) -> Result<Tensor> {
    apply(x, constants!(p), |g, x, q| enhanced_lca_forward(g, x, q))
}

fn lca_params(c: usize, heads: usize, seed: u64) -> LcaParams<Tensor> {
    let mut r = rng(seed);
    LcaParams {
        cab: CabParams::init(c, heads, &mut r),
        iel: IelParams::init(c, 2, 0.01, &mut r),
        dance: DanceParams::init(c, 4, 0.01, &mut r),
        se: SeParams::init(c, 4, &mut r),
    }
}

#[test]
fn dance_matches_scripted_oracle() {
    for i in 0..10u64 {
        let c = [4, 8, 16][i as usize % 3];
        let p = DanceParams::init(c, 4, 0.01, &mut rng(i));
        let p = rand_params(&p, |p, f| p.map(&mut |t| f(t)), 100 + i);
        let x = uniform(Shape::new(2, c, 5 + i as usize % 3, 6), 200 + i);
        let got = dance(&x, &p).unwrap();
        let want = dance_oracle(&x, &p);
        assert!(got.max_abs_diff(&want) < 1e-12, "instance {i}: {}", got.max_abs_diff(&want));
    }
}

#[test]
fn se_matches_scripted_oracle() {
    for i in 0..5u64 {
        let p = SeParams::init(8, 4, &mut rng(i));
        let p = rand_params(&p, |p, f| p.map(&mut |t| f(t)), 10 + i);
        let x = uniform(Shape::new(2, 8, 4, 5), 20 + i);
        assert!(se(&x, &p).unwrap().max_abs_diff(&se_oracle(&x, &p)) < 1e-12);
    }
}

#[test]
fn blocks_annihilate_zero_input() {
    let x = Tensor::zeros(Shape::new(2, 16, 8, 8));
    let p = lca_params(16, 2, 1);
    for (name, y) in [
        ("dance", dance(&x, &p.dance)),
        ("iel", iel(&x, &p.iel)),
        ("cab", cab(&x, &p.cab)),
        ("lca", lca(&x, &p)),
    ] {
        let y = y.unwrap();
        assert_eq!(y.shape(), x.shape(), "{name}");
        assert!(y.data().iter().all(|&v| v == 0.0), "{name}");
    }
}

#[test]
fn blocks_preserve_shape_and_reject_width_mismatch() {
    let p = lca_params(32, 4, 2);
    let x = uniform(Shape::new(1, 32, 4, 4), 3);
    assert_eq!(iel(&x, &p.iel).unwrap().shape(), x.shape());
    assert_eq!(se(&x, &p.se).unwrap().shape(), x.shape());
    assert_eq!(lca(&x, &p).unwrap().shape(), x.shape());
    let wrong = uniform(Shape::new(1, 16, 4, 4), 4);
    assert!(matches!(dance(&wrong, &p.dance), Err(Error::Shape { .. })));
    assert!(matches!(iel(&wrong, &p.iel), Err(Error::Shape { .. })));
    assert!(matches!(se(&wrong, &p.se), Err(Error::Shape { .. })));
    assert!(matches!(cab(&wrong, &p.cab), Err(Error::Shape { .. })));
    let mut bad_heads = p.cab.clone();
    bad_heads.heads = 3;
    assert!(matches!(cab(&x, &bad_heads), Err(Error::Shape { .. })));
}

#[test]
fn se_with_zero_params_is_identity() {
    let p = SeParams::init(8, 4, &mut rng(5)).map(&mut |t| Tensor::zeros(t.shape()));
    let x = uniform(Shape::new(2, 8, 3, 3), 6);
    assert_eq!(se(&x, &p).unwrap(), x);
}

#[test]
fn se_keeps_constant_planes_constant() {
    let p = rand_params(&SeParams::init(8, 4, &mut rng(7)), |p, f| p.map(&mut |t| f(t)), 8);
    let x = Tensor::from_fn(Shape::new(1, 8, 4, 4), |_, c, _, _| 0.1 * c as f64);
    let y = se(&x, &p).unwrap();
    for c in 0..8 {
        let v = y.at(0, c, 0, 0);
        for yy in 0..4 {
            for xx in 0..4 {
                assert_eq!(y.at(0, c, yy, xx), v);
            }
        }
    }
}

#[test]
fn iel_golden_values() {
    let p = IelParams::init(8, 2, 0.01, &mut rng(11));
    let p = rand_params(&p, |p, f| p.map(&mut |t| f(t)), 12);
    let x = Tensor::from_fn(Shape::new(1, 8, 4, 4), |_, c, y, w| (((3 * c + 5 * y + 7 * w) % 13) as f64) / 12.0 - 0.5);
    let y = iel(&x, &p).unwrap();
    let sum = y.sum();
    let weighted: f64 = y.data().iter().enumerate().map(|(i, v)| i as f64 * v).sum();
    println!("iel golden: {sum:.17e} {weighted:.17e}");
    assert!((sum - IEL_GOLDEN.0).abs() < 1e-12 * IEL_GOLDEN.0.abs().max(1.0));
    assert!((weighted - IEL_GOLDEN.1).abs() < 1e-12 * IEL_GOLDEN.1.abs().max(1.0));
}

const IEL_GOLDEN: (f64, f64) = (1.68555916049176679e0, 3.27323130383889634e2);

#[test]
fn attention_rows_sum_to_one() {
    let p = rand_params(&CabParams::init(8, 2, &mut rng(13)), |p, f| p.map(&mut |t| f(t)), 14);
    let x = uniform(Shape::new(2, 8, 3, 4), 15);
    let mut g = Graph::new();
    let q = p.map(&mut |t| g.constant(t.clone()));
    let xv = g.constant(x);
    let (attn, _) = cab_attention(&mut g, xv, &q).unwrap();
    let a = g.value(attn);
    assert_eq!(a.shape(), Shape::new(2, 2, 4, 4));
    for row in a.data().chunks(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(row.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn vanishing_temperature_gives_uniform_mixing() {
    // Two channels, one head. v passes the input through unchanged and the projection is
    // the identity, so uniform attention yields x + mean over channels of x.
    let mut p = rand_params(&CabParams::init(2, 1, &mut rng(16)), |p, f| p.map(&mut |t| f(t)), 17);
    p.log_temperature = Tensor::full(Shape::new(1, 1, 1, 1), -60.0);
    let identity_1x1 = Tensor::from_fn(Shape::new(2, 2, 1, 1), |o, i, _, _| (o == i) as u8 as f64);
    let centre_tap = Tensor::from_fn(Shape::new(2, 1, 3, 3), |_, _, y, x| (y == 1 && x == 1) as u8 as f64);
    let zero_bias = Tensor::zeros(Shape::new(1, 2, 1, 1));
    p.v = Conv { weight: identity_1x1.clone(), bias: zero_bias.clone() };
    p.v_dw = Conv { weight: centre_tap, bias: zero_bias.clone() };
    p.project = Conv { weight: identity_1x1, bias: zero_bias };
    let x = Tensor::from_vec(Shape::new(1, 2, 2, 2), vec![0.1, 0.4, -0.3, 0.8, 0.5, -0.2, 0.6, 0.0]).unwrap();
    let got = cab(&x, &p).unwrap();
    // per pixel: channel mean of (0.1, 0.5), (0.4, -0.2), (-0.3, 0.6), (0.8, 0.0)
    let means = [0.3, 0.1, 0.15, 0.4];
    let want = Tensor::from_fn(x.shape(), |_, c, y, w| x.at(0, c, y, w) + means[2 * y + w]);
    assert!(got.max_abs_diff(&want) < 1e-14, "{got:?}");
}

#[test]
fn enhanced_lca_is_the_composition_of_its_blocks() {
    let p = rand_params(&lca_params(8, 2, 18), |p, f| p.map(&mut |t| f(t)), 19);
    let x = uniform(Shape::new(2, 8, 4, 4), 20);
    let manual = se(&dance(&iel(&cab(&x, &p.cab).unwrap(), &p.iel).unwrap(), &p.dance).unwrap(), &p.se).unwrap();
    assert_eq!(lca(&x, &p).unwrap(), manual);
}

#[test]
fn init_is_deterministic_with_zero_output_and_biases() {
    let cfg = NetworkConfig::default();
    let a = init_params(&cfg).unwrap();
    assert_eq!(a, init_params(&cfg).unwrap());
    assert_ne!(a, init_params(&NetworkConfig { seed: 1, ..cfg }).unwrap());
    assert!(a.output.weight.data().iter().all(|&v| v == 0.0));
    assert!(a.stem.bias.data().iter().all(|&v| v == 0.0));
    assert!(a.blocks[2].dance.dark2.bias.data().iter().all(|&v| v == 0.0));
}

#[test]
fn default_parameter_count_is_stable() {
    let n = Network::new(NetworkConfig::default()).unwrap().parameter_count();
    println!("default parameter count: {n}");
    assert_eq!(n, DEFAULT_PARAMETER_COUNT);
}

const DEFAULT_PARAMETER_COUNT: usize = 199_778;

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        NetworkConfig::with_width(2),
        NetworkConfig { heads: [3, 2, 4], ..Default::default() },
        NetworkConfig { se_reduction: 0, ..Default::default() },
        NetworkConfig { iel_expansion: 0, ..Default::default() },
        NetworkConfig { leaky_slope: f64::NAN, ..Default::default() },
    ] {
        assert!(matches!(init_params(&cfg), Err(Error::Invalid(_))), "{cfg:?}");
    }
}

#[test]
fn fresh_network_is_the_identity() {
    let net = Network::new(NetworkConfig::with_width(8)).unwrap();
    let x = Tensor::uniform(Shape::new(2, 3, 16, 12), 0.0, 1.0, &mut rng(21));
    assert_eq!(net.forward(&x).unwrap(), x);
}

#[test]
fn forward_shape_and_divisibility() {
    let mut net = Network::new(NetworkConfig::with_width(4)).unwrap();
    net.params.output = rand_params(&net.params.output, |p, f| p.map(&mut |t| f(t)), 22);
    let x = Tensor::uniform(Shape::new(1, 3, 32, 32), 0.0, 1.0, &mut rng(23));
    let y = net.forward(&x).unwrap();
    assert_eq!(y.shape(), x.shape());
    assert_ne!(y, x);
    let odd = Tensor::zeros(Shape::new(1, 3, 10, 8));
    let err = net.forward(&odd).unwrap_err();
    assert!(err.to_string().contains("reflect"), "{err}");
}

#[test]
fn forward_golden_digest() {
    let mut net = Network::new(NetworkConfig { seed: 7, ..NetworkConfig::with_width(8) }).unwrap();
    net.params = rand_params(&net.params, |p, f| p.map(&mut |t| f(t)), 24).map(&mut |t| t.scale(0.5));
    let x = Tensor::from_fn(Shape::new(1, 3, 8, 8), |_, c, y, w| (((7 * c + 3 * y + 5 * w) % 11) as f64) / 10.0);
    let y = net.forward(&x).unwrap();
    assert_eq!(y, net.forward(&x).unwrap());
    let sum = y.sum();
    let weighted: f64 = y.data().iter().enumerate().map(|(i, v)| i as f64 * v).sum();
    println!("forward golden: {sum:.17e} {weighted:.17e}");
    assert!((sum - FORWARD_GOLDEN.0).abs() < 1e-12 * FORWARD_GOLDEN.0.abs().max(1.0));
    assert!((weighted - FORWARD_GOLDEN.1).abs() < 1e-12 * FORWARD_GOLDEN.1.abs().max(1.0));
}

const FORWARD_GOLDEN: (f64, f64) = (1.20028250782858066e2, 1.08354532120570111e4);

#[test]
fn flatten_order_matches_map_order() {
    let p = init_params(&NetworkConfig::with_width(4)).unwrap();
    let mut k = 0.0;
    let numbered = p.map(&mut |t: &Tensor| {
        k += 1.0;
        Tensor::full(t.shape(), k)
    });
    let firsts: Vec<f64> = numbered.flatten().iter().map(|t| t.data()[0]).collect();
    let want: Vec<f64> = (1..=firsts.len()).map(|i| i as f64).collect();
    assert_eq!(firsts, want);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut net = Network::new(NetworkConfig { seed: 3, global_residual: false, ..NetworkConfig::with_width(4) }).unwrap();
    net.params.output = rand_params(&net.params.output, |p, f| p.map(&mut |t| f(t)), 25);
    let bytes = net.to_bytes();
    let back = Network::from_bytes(&bytes, Path::new("mem")).unwrap();
    assert_eq!(back, net);
    assert_eq!(back.to_bytes(), bytes);
    let x = Tensor::uniform(Shape::new(1, 3, 8, 8), 0.0, 1.0, &mut rng(26));
    assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = Network::new(NetworkConfig::with_width(4)).unwrap().to_bytes();
    let path = Path::new("bad.ckpt");
    let mut magic = bytes.clone();
    magic[0] = b'X';
    let mut trailing = bytes.clone();
    trailing.push(0);
    let mut width = bytes.clone();
    width[8] = 6; // base width 6 changes every tensor shape
    for (name, b) in [
        ("magic", magic),
        ("truncated", bytes[..bytes.len() - 3].to_vec()),
        ("trailing", trailing),
        ("width", width),
    ] {
        let err = Network::from_bytes(&b, path).unwrap_err();
        assert!(matches!(err, Error::Format { kind: "checkpoint", .. }), "{name}: {err}");
    }
}
