mod common;

use std::cell::Cell;
use std::collections::HashMap;

use common::*;
use proptest::prelude::*;
use rnnt_core::decode::*;
use rnnt_core::lattice::{LabelSeq, Vocab};
use rnnt_core::model::{visual_encode, ModelParams};
use rnnt_core::numerics::RealMatrix;
use rnnt_core::Error;

const CLASSES: usize = 5;

fn one_hot(k: usize) -> Vec<f64> {
    let mut v = vec![0.0; CLASSES];
    v[k] = 1.0;
    v
}

/// Scorer whose argmax at `(t, context)` is read from a table; the context is
/// the list of labels emitted so far. Missing entries score blank.
struct Scripted {
    frames: usize,
    table: HashMap<(usize, Vec<usize>), usize>,
    advances: Cell<usize>,
    score_calls: Cell<usize>,
}

impl Scripted {
    fn new(frames: usize, entries: &[(usize, &[usize], usize)]) -> Self {
        Self {
            frames,
            table: entries.iter().map(|&(t, ctx, k)| ((t, ctx.to_vec()), k)).collect(),
            advances: Cell::new(0),
            score_calls: Cell::new(0),
        }
    }
}

impl StepScorer for Scripted {
    type State = Vec<usize>;

    fn frames(&self) -> usize {
        self.frames
    }

    fn start(&self) -> rnnt_core::Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn scores(&self, t: usize, state: &Vec<usize>) -> rnnt_core::Result<Vec<f64>> {
        self.score_calls.set(self.score_calls.get() + 1);
        Ok(one_hot(*self.table.get(&(t, state.clone())).unwrap_or(&0)))
    }

    fn advance(&self, state: &Vec<usize>, label: usize) -> rnnt_core::Result<Vec<usize>> {
        self.advances.set(self.advances.get() + 1);
        let mut next = state.clone();
        next.push(label);
        Ok(next)
    }
}

fn single_emit() -> DecodeConfig {
    DecodeConfig::default()
}

fn multi(cap: usize) -> DecodeConfig {
    DecodeConfig {
        mode: DecodeMode::MultiEmit,
        max_symbols_per_frame: cap,
    }
}

#[test]
fn always_blank_gives_empty_output() {
    let s = Scripted::new(4, &[]);
    assert!(greedy_search(&s, &single_emit()).unwrap().is_empty());
    assert_eq!(s.advances.get(), 0);
}

#[test]
fn single_emission_at_first_frame() {
    let s = Scripted::new(3, &[(0, &[], 2)]);
    assert_eq!(greedy_search(&s, &single_emit()).unwrap().ids(), &[2]);
}

#[test]
fn scripted_trace_matches_hand_execution() {
    // Table (frame, context) → argmax:
    //   t=0, ()     → 3       emit 3
    //   t=1, (3)    → 1       emit 1
    //   t=1, (3,1)  → 4       only reachable by multi-emission
    //   t=2, (3,1)  → 0       blank
    //   t=2, (3,1,4)→ 2       only reachable by multi-emission
    // Single-emission greedy: frame 0 emits 3, frame 1 emits 1, frame 2 blank → (3, 1).
    let entries: &[(usize, &[usize], usize)] = &[
        (0, &[], 3),
        (1, &[3], 1),
        (1, &[3, 1], 4),
        (2, &[3, 1], 0),
        (2, &[3, 1, 4], 2),
    ];
    let s = Scripted::new(3, entries);
    assert_eq!(greedy_search(&s, &single_emit()).unwrap().ids(), &[3, 1]);
    assert_eq!(s.advances.get(), 2);
    assert_eq!(s.score_calls.get(), 3);

    // Multi-emission, cap 3: frame 0 emits 3 then (0,(3)) is blank;
    // frame 1 emits 1, 4, then (1,(3,1,4)) blank; frame 2 emits 2, then blank.
    let s = Scripted::new(3, entries);
    assert_eq!(greedy_search(&s, &multi(3)).unwrap().ids(), &[3, 1, 4, 2]);
    assert_eq!(s.advances.get(), 4);
}

#[test]
fn multi_emit_respects_cap() {
    // Frame 0 would emit forever.
    let entries: &[(usize, &[usize], usize)] = &[(0, &[], 1), (0, &[1], 1), (0, &[1, 1], 1), (0, &[1, 1, 1], 1)];
    let s = Scripted::new(1, entries);
    assert_eq!(greedy_search(&s, &multi(2)).unwrap().ids(), &[1, 1]);
}

#[test]
fn ties_go_to_blank() {
    struct Flat;
    impl StepScorer for Flat {
        type State = ();
        fn frames(&self) -> usize {
            5
        }
        fn start(&self) -> rnnt_core::Result<()> {
            Ok(())
        }
        fn scores(&self, _: usize, _: &()) -> rnnt_core::Result<Vec<f64>> {
            Ok(vec![-1.0; CLASSES])
        }
        fn advance(&self, _: &(), _: usize) -> rnnt_core::Result<()> {
            panic!("no emission expected")
        }
    }
    assert!(greedy_search(&Flat, &single_emit()).unwrap().is_empty());
}

#[test]
fn empty_feature_sequence_is_usage_error() {
    let s = Scripted::new(0, &[]);
    assert!(matches!(greedy_search(&s, &single_emit()), Err(Error::Usage(_))));
}

proptest! {
    #[test]
    fn single_emit_mode_bounded_and_cap_one_equivalent(
        frames in 1usize..6,
        picks in prop::collection::vec((0usize..6, prop::collection::vec(1usize..CLASSES, 0..4), 0usize..CLASSES), 0..30),
    ) {
        let entries: Vec<(usize, &[usize], usize)> = picks.iter().map(|(t, c, k)| (*t, c.as_slice(), *k)).collect();
        let a = Scripted::new(frames, &entries);
        let b = Scripted::new(frames, &entries);
        let out_a = greedy_search(&a, &single_emit()).unwrap();
        let out_b = greedy_search(&b, &multi(1)).unwrap();
        prop_assert!(out_a.len() <= frames);
        prop_assert_eq!(&out_a, &out_b);
        prop_assert_eq!(a.advances.get(), out_a.len());
    }
}

#[test]
fn model_decode_is_deterministic_and_bounded() {
    let cfg = doll_config(4);
    let params = ModelParams::init(&cfg, 21).unwrap();
    let mut r = rng(5);
    let image = RealMatrix::new(4, 10, uniform_vec(&mut r, 40, 0.0, 1.0)).unwrap();
    let features = visual_encode(&image, &params, &cfg).unwrap();
    let a = greedy_decode(&features, &params, &cfg, &single_emit()).unwrap();
    let b = greedy_decode(&features, &params, &cfg, &single_emit()).unwrap();
    assert_eq!(a, b);
    assert!(a.len() <= features.frames());
    let c = greedy_decode(&features, &params, &cfg, &multi(1)).unwrap();
    assert_eq!(a, c);
}

#[test]
fn decode_image_vocab_checks() {
    let cfg = doll_config(4);
    let params = ModelParams::init(&cfg, 2).unwrap();
    let image = RealMatrix::zeros(4, 6);
    let short = Vocab::new(vec!['a', 'b']).unwrap();
    assert!(matches!(
        decode_image(&image, &params, &cfg, &short, &single_emit()),
        Err(Error::Config(_))
    ));
    let vocab = Vocab::new(vec!['a', 'b', 'c', 'd']).unwrap();
    let text = decode_image(&image, &params, &cfg, &vocab, &single_emit()).unwrap();
    assert!(text.chars().all(|c| "abcd".contains(c)));
}

#[test]
fn detokenization_maps_ids_in_order() {
    let vocab = Vocab::new("abcdef".chars().collect()).unwrap();
    assert_eq!(vocab.decode(&LabelSeq::new(vec![2, 5]).unwrap()).unwrap(), "be");
    assert_eq!(vocab.decode(&LabelSeq::empty()).unwrap(), "");
}
