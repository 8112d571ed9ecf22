//! Central-difference gradient checks for model components.

use polyvox_core::acoustic::{AcousticConfig, AcousticModel, AttentionState, DecoderState, SpeakerTable};
use polyvox_core::melspec::N_MELS;
use polyvox_core::nn::{softmax_in_place, Graph, ParamStore, Tensor, Var};
use polyvox_core::textfront::{PhonemeSequence, SymbolInventory};
use polyvox_core::vocoder::{Vocoder, VocoderConfig};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const COORDS_PER_POINT: usize = 40;

#[derive(Debug, Clone)]
pub struct ComponentCheck {
    pub component: &'static str,
    pub points: usize,
    /// Largest `|a − n| / max(|a|, |n|)` over points, vector norms.
    pub worst_relative_error: f64,
}

/// Scalar loss `sum(v ⊙ R)` with `R` fixed by shape.
fn project(g: &mut Graph, v: Var) -> Var {
    let (r, c) = g.value(v).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ (r * 1000 + c) as u64);
    let weights = g.input(Tensor::randn(r, c, 1.0, &mut rng));
    let prod = g.mul(v, weights);
    g.sum(prod)
}

fn perturbed(store: &ParamStore, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut s = store.clone();
    for id in store.ids() {
        for x in s.get_mut(id).data_mut() {
            *x += 0.1 * (rng.random::<f64>() * 2.0 - 1.0);
        }
    }
    s
}

fn check_point(store: &ParamStore, prefix: &str, rng: &mut ChaCha8Rng, build: &dyn Fn(&mut Graph) -> Var) -> f64 {
    let coords: Vec<_> = store
        .ids()
        .filter(|&id| store.name(id).starts_with(prefix))
        .flat_map(|id| (0..store.get(id).len()).map(move |k| (id, k)))
        .collect();
    assert!(!coords.is_empty(), "no parameters under {prefix}");
    let picks = sample(rng, coords.len(), COORDS_PER_POINT.min(coords.len()));

    let mut g = Graph::new(store);
    let out = build(&mut g);
    let loss = project(&mut g, out);
    let grads = g.backward(loss);

    let eval = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let out = build(&mut g);
        let loss = project(&mut g, out);
        g.scalar(loss)
    };
    let mut work = store.clone();
    let (mut diff, mut an, mut nn) = (0.0, 0.0, 0.0);
    for i in picks {
        let (id, k) = coords[i];
        let analytic = grads.get(id).map_or(0.0, |t| t.data()[k]);
        let orig = work.get(id).data()[k];
        work.get_mut(id).data_mut()[k] = orig + STEP;
        let up = eval(&work);
        work.get_mut(id).data_mut()[k] = orig - STEP;
        let down = eval(&work);
        work.get_mut(id).data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        diff += (analytic - numeric).powi(2);
        an += analytic * analytic;
        nn += numeric * numeric;
    }
    diff.sqrt() / an.sqrt().max(nn.sqrt()).max(1e-300)
}

fn random_input(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(rows, cols, 0.5, rng)
}

fn run(
    component: &'static str,
    store: &ParamStore,
    prefix: &str,
    points: usize,
    seed: u64,
    build: impl Fn(&mut Graph, &mut ChaCha8Rng) -> Var,
) -> ComponentCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for p in 0..points {
        let point = perturbed(store, &mut rng);
        let input_seed = seed.wrapping_mul(31).wrapping_add(p as u64);
        let f = |g: &mut Graph| build(g, &mut ChaCha8Rng::seed_from_u64(input_seed));
        worst = worst.max(check_point(&point, prefix, &mut rng, &f));
    }
    ComponentCheck {
        component,
        points,
        worst_relative_error: worst,
    }
}

fn toy_model() -> (AcousticModel, PhonemeSequence) {
    let inv = SymbolInventory::arpabet();
    let ids: Vec<usize> = ["HH", "AH0", "L", "OW1", "W", "ER1"]
        .iter()
        .map(|p| inv.id(p).unwrap())
        .chain([inv.term_id()])
        .collect();
    let seq = PhonemeSequence {
        utterance_id: "g".into(),
        symbol_ids: ids,
        source_text: "hello world".into(),
    };
    let cfg = AcousticConfig::toy(inv.len(), 2);
    let model = AcousticModel::new(cfg, SpeakerTable::new(vec!["a".into(), "b".into()]), &inv, 11).unwrap();
    (model, seq)
}

pub fn encoder(points: usize) -> ComponentCheck {
    let (model, seq) = toy_model();
    run("encoder", model.params(), "enc.", points, 1, |g, _| {
        model.encode_sequence(g, &seq).unwrap()
    })
}

pub fn attention(points: usize) -> ComponentCheck {
    let (model, _) = toy_model();
    let cfg = model.config().clone();
    let tenc = 7;
    run("attention", model.params(), "att.", points, 2, |g, rng| {
        let query = g.input(random_input(1, cfg.decoder_dim + cfg.prenet_dim, rng));
        let memory = g.input(random_input(tenc, cfg.encoder_dim, rng));
        let mut prev: Vec<f64> = (0..tenc).map(|_| rng.random::<f64>() * 3.0).collect();
        softmax_in_place(&mut prev);
        let previous = AttentionState {
            weights: g.input(Tensor::row_vector(prev)),
        };
        let keys = model.attention_keys(g, memory);
        let (att, context) = model.attend(g, query, previous, memory, keys).unwrap();
        g.concat_cols(&[att.weights, context])
    })
}

pub fn decoder_block(points: usize) -> ComponentCheck {
    let (model, _) = toy_model();
    let cfg = model.config().clone();
    run("decoder block", model.params(), "dec.", points, 3, |g, rng| {
        let context = g.input(random_input(1, cfg.encoder_dim, rng));
        let frame = g.input(random_input(1, cfg.prenet_dim, rng));
        let h = g.input(random_input(1, cfg.decoder_dim, rng));
        let c = g.input(random_input(1, cfg.decoder_dim, rng));
        let speaker = model.speaker_var(g, "b").unwrap();
        let state = DecoderState::new(h, c);
        let out = model.decode_block(g, context, frame, speaker, state, None).unwrap();
        g.concat_cols(&[out.block, out.stop_logit])
    })
}

pub fn vocoder_conditioning(points: usize) -> ComponentCheck {
    let vocoder = Vocoder::new(VocoderConfig::toy(), 5).unwrap();
    run(
        "vocoder conditioning",
        vocoder.params(),
        "cond.",
        points,
        4,
        |g, rng| {
            let mel = g.input(random_input(4, N_MELS, rng));
            vocoder.condition(g, mel).unwrap()
        },
    )
}

pub fn all(points: usize) -> Vec<ComponentCheck> {
    vec![
        encoder(points),
        attention(points),
        decoder_block(points),
        vocoder_conditioning(points),
    ]
}
