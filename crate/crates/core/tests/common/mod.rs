//! Brute-force reference implementations shared by the oracle tests and the
//! acceptance harness.
#![allow(dead_code)]

use opcap::dataset::{
    AnnotationTimeline, ChangeKind, SceneGraphTriplet, StatePairCandidate, StatePairSample, TripletLabels, Vocabulary,
    EOS, PAD,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- metrics -------------------------------------------------------------

fn ngrams(s: &[u32], n: usize) -> Vec<Vec<u32>> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
}

fn count(list: &[Vec<u32>], g: &[u32]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

/// (clipped matches, hypothesis n-gram count)
fn clip(hyp: &[u32], refs: &[Vec<u32>], n: usize) -> (usize, usize) {
    let h = ngrams(hyp, n);
    let mut m = 0;
    for g in distinct(&h) {
        let best = refs.iter().map(|r| count(&ngrams(r, n), &g)).max().unwrap_or(0);
        m += count(&h, &g).min(best);
    }
    (m, h.len())
}

fn closest(c: usize, refs: &[Vec<u32>]) -> usize {
    let mut best = refs[0].len();
    for r in refs {
        let d = (r.len() as i64 - c as i64).abs();
        let bd = (best as i64 - c as i64).abs();
        if d < bd || (d == bd && r.len() < best) {
            best = r.len();
        }
    }
    best
}

fn bp(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

fn geo(p: &[f64], bp: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for n in 1..=p.len() {
        let mut prod = 1.0;
        for x in &p[..n] {
            prod *= x;
        }
        out.push(if prod == 0.0 { 0.0 } else { bp * prod.powf(1.0 / n as f64) });
    }
    out
}

pub fn bleu_oracle(hyp: &[u32], refs: &[Vec<u32>]) -> Vec<f64> {
    if hyp.is_empty() {
        return vec![0.0; 4];
    }
    let mut p = Vec::new();
    for n in 1..=4 {
        let (m, t) = clip(hyp, refs, n);
        p.push(if n == 1 { m as f64 / t as f64 } else { (m as f64 + 1.0) / (t as f64 + 1.0) });
    }
    geo(&p, bp(hyp.len(), closest(hyp.len(), refs)))
}

pub fn corpus_bleu_oracle(hyps: &[Vec<u32>], refs: &[Vec<Vec<u32>>]) -> Vec<f64> {
    let (mut c, mut r) = (0, 0);
    let mut p = Vec::new();
    for n in 1..=4 {
        let (mut m, mut t) = (0, 0);
        for (h, rs) in hyps.iter().zip(refs) {
            let (a, b) = clip(h, rs, n);
            m += a;
            t += b;
        }
        p.push(if t == 0 { 0.0 } else { m as f64 / t as f64 });
    }
    for (h, rs) in hyps.iter().zip(refs) {
        c += h.len();
        r += closest(h.len(), rs);
    }
    geo(&p, bp(c, r))
}

fn is_subsequence(sub: &[u32], s: &[u32]) -> bool {
    let mut it = s.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn lcs_oracle(a: &[u32], b: &[u32]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<u32> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_oracle(hyp: &[u32], refs: &[Vec<u32>], beta: f64) -> f64 {
    let mut p: f64 = 0.0;
    let mut r: f64 = 0.0;
    for rf in refs {
        let l = lcs_oracle(hyp, rf) as f64;
        p = p.max(l / hyp.len() as f64);
        r = r.max(l / rf.len() as f64);
    }
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    (1.0 + beta * beta) * p * r / (r + beta * beta * p)
}

pub fn cider_oracle(hyps: &[Vec<u32>], refs: &[Vec<Vec<u32>>]) -> f64 {
    let docs = hyps.len() as f64;
    let mut total = 0.0;
    for i in 0..hyps.len() {
        let mut s = 0.0;
        for n in 1..=4 {
            let df = |g: &[u32]| {
                let d = refs.iter().filter(|rs| rs.iter().any(|r| count(&ngrams(r, n), g) > 0)).count();
                (d.max(1)) as f64
            };
            let vec_of = |toks: &[u32]| -> Vec<(Vec<u32>, f64)> {
                let all = ngrams(toks, n);
                distinct(&all)
                    .into_iter()
                    .map(|g| {
                        let w = count(&all, &g) as f64 * (docs.ln() - df(&g).ln());
                        (g, w)
                    })
                    .collect()
            };
            let h = vec_of(&hyps[i]);
            let mut sim = 0.0;
            for r in &refs[i] {
                let rv = vec_of(r);
                let norm = |v: &[(Vec<u32>, f64)]| v.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt();
                let (nh, nr) = (norm(&h), norm(&rv));
                if nh > 0.0 && nr > 0.0 {
                    let mut d = 0.0;
                    for (g, w) in &h {
                        for (g2, w2) in &rv {
                            if g == g2 {
                                d += w * w2;
                            }
                        }
                    }
                    sim += d / (nh * nr);
                }
            }
            s += sim / refs[i].len() as f64;
        }
        total += 10.0 * s / 4.0;
    }
    total / docs
}

pub struct MetricCase {
    pub hyps: Vec<Vec<u32>>,
    pub refs: Vec<Vec<Vec<u32>>>,
}

/// A small corpus over a tiny alphabet, so n-grams repeat often.
pub fn metric_case(seed: u64) -> MetricCase {
    let mut r = rng(seed);
    let docs = r.random_range(2..=5);
    let seq = |r: &mut ChaCha8Rng| -> Vec<u32> {
        let len = r.random_range(1..=9);
        (0..len).map(|_| r.random_range(0..5)).collect()
    };
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for _ in 0..docs {
        hyps.push(seq(&mut r));
        let k = r.random_range(1..=3);
        refs.push((0..k).map(|_| seq(&mut r)).collect());
    }
    MetricCase { hyps, refs }
}

// ---- scene graphs ----------------------------------------------------------

const SUBJECTS: [&str; 4] = ["person", "cup", "plate", "towel"];
const RELS: [&str; 4] = ["on", "in", "holding", "is"];
const OBJECTS: [&str; 4] = ["table", "sink", "clean", "cup"];

pub fn random_triplets(r: &mut ChaCha8Rng, max: usize) -> Vec<TripletLabels> {
    let k = r.random_range(0..=max);
    (0..k)
        .map(|_| {
            TripletLabels::new(
                SUBJECTS[r.random_range(0..4)],
                RELS[r.random_range(0..4)],
                OBJECTS[r.random_range(0..4)],
            )
        })
        .collect()
}

pub fn role_vocab() -> Vocabulary {
    let mut labels: Vec<&str> = SUBJECTS.iter().chain(&RELS).chain(&OBJECTS).copied().collect();
    labels.sort();
    labels.dedup();
    let mut v = Vocabulary::from_tokens(labels);
    for s in SUBJECTS {
        for rel in RELS {
            for o in OBJECTS {
                v.add_triplet_roles(&TripletLabels::new(s, rel, o));
            }
        }
    }
    v
}

pub fn sample_with(a: &[TripletLabels], b: &[TripletLabels]) -> StatePairSample {
    StatePairSample {
        id: "x".into(),
        image_a: "a.png".into(),
        image_b: "b.png".into(),
        viewpoint: opcap::dataset::Viewpoint::ThirdPerson,
        object_hint: "cup".into(),
        caption: "move the cup".into(),
        graphs_a: a.iter().cloned().collect(),
        graphs_b: b.iter().cloned().collect(),
    }
}

/// Symmetric difference by linear scans over deduplicated lists.
pub fn diff_targets_oracle(a: &[TripletLabels], b: &[TripletLabels], vocab: &Vocabulary, max: usize) -> Vec<u32> {
    let mut ua: Vec<&TripletLabels> = Vec::new();
    let mut ub: Vec<&TripletLabels> = Vec::new();
    for t in a {
        if !ua.contains(&t) {
            ua.push(t);
        }
    }
    for t in b {
        if !ub.contains(&t) {
            ub.push(t);
        }
    }
    let mut ids: Vec<SceneGraphTriplet> = Vec::new();
    for t in &ua {
        if !ub.contains(t) {
            ids.push(vocab.encode_triplet(t));
        }
    }
    for t in &ub {
        if !ua.contains(t) {
            ids.push(vocab.encode_triplet(t));
        }
    }
    // bubble sort on (s, r, o)
    for i in 0..ids.len() {
        for j in 0..ids.len() - 1 - i {
            let k = |t: &SceneGraphTriplet| (t.subject, t.relationship, t.object);
            if k(&ids[j]) > k(&ids[j + 1]) {
                ids.swap(j, j + 1);
            }
        }
    }
    let mut out = Vec::new();
    for t in ids.iter().take(max) {
        out.extend([t.subject, t.relationship, t.object]);
    }
    out.push(EOS);
    while out.len() < 3 * max + 1 {
        out.push(PAD);
    }
    out
}

pub fn random_timeline(r: &mut ChaCha8Rng) -> AnnotationTimeline {
    let fps = [10.0, 25.0, 30.0][r.random_range(0..3)];
    let end = r.random_range(4..=12) as f64;
    let stamps = r.random_range(1..=5);
    let mut times: Vec<f64> = (0..stamps).map(|_| r.random_range(0..=(end as u32 * 2)) as f64 / 2.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut events = Vec::new();
    for t in times {
        let mut ts = random_triplets(r, 3);
        while ts.is_empty() {
            ts = random_triplets(r, 3);
        }
        for tr in ts {
            events.push(opcap::dataset::TimelineEvent { t, triplet: tr, rect: None });
        }
    }
    AnnotationTimeline {
        video: "v".into(),
        fps,
        start: 0.0,
        end,
        events,
    }
}

/// Pair extraction by rescanning the raw event list for every timestamp.
pub fn extraction_oracle(tl: &AnnotationTimeline, margin: f64) -> Vec<StatePairCandidate> {
    let mut stamps: Vec<f64> = Vec::new();
    for e in &tl.events {
        if !stamps.contains(&e.t) {
            stamps.push(e.t);
        }
    }
    let state = |t: f64| -> Vec<TripletLabels> {
        let mut s: Vec<TripletLabels> = Vec::new();
        for e in &tl.events {
            if e.t == t && !s.contains(&e.triplet) {
                s.push(e.triplet.clone());
            }
        }
        s
    };
    let same_pair = |x: &TripletLabels, y: &TripletLabels| x.subject == y.subject && x.object == y.object;
    let mut out = Vec::new();
    for w in stamps.windows(2) {
        let (prev, next) = (state(w[0]), state(w[1]));
        let t = w[1];
        let mut changes: Vec<(TripletLabels, ChangeKind)> = Vec::new();
        for tr in &next {
            if !prev.contains(tr) {
                let kind = if prev.iter().any(|p| same_pair(p, tr)) {
                    ChangeKind::Relationship
                } else {
                    ChangeKind::Added
                };
                changes.push((tr.clone(), kind));
            }
        }
        for tr in &prev {
            if !next.contains(tr) && !next.iter().any(|n| same_pair(n, tr)) {
                changes.push((tr.clone(), ChangeKind::Removed));
            }
        }
        changes.sort_by(|a, b| a.0.cmp(&b.0));
        for (tr, kind) in changes {
            if t - margin < tl.start || t + margin > tl.end {
                continue;
            }
            out.push(StatePairCandidate {
                t,
                frame_before: ((t - margin) * tl.fps).round() as u64,
                frame_after: ((t + margin) * tl.fps).round() as u64,
                triplet: tr,
                kind,
            });
        }
    }
    out
}

// ---- gradients -------------------------------------------------------------

pub struct GradCheck {
    pub params: usize,
    pub checked: usize,
    pub max_rel: f64,
    pub worst: String,
}

pub fn tiny_model_config() -> opcap::model::ModelConfig {
    use opcap::encoder::ConvSpec;
    opcap::model::ModelConfig {
        image_size: 8,
        conv: vec![
            ConvSpec { channels: 4, kernel: 2, stride: 2 },
            ConvSpec { channels: 5, kernel: 2, stride: 2 },
        ],
        attention_hidden: 4,
        embed: 4,
        hidden: 6,
        attention_dim: 4,
        sg_embed: 3,
        sg_hidden: 5,
        max_caption_len: 6,
        max_triplets: 2,
        freeze_encoder: false,
    }
}

/// Backprop versus central differences of the combined objective on random
/// images, sampling `samples` parameters round-robin over all tensors.
pub fn gradient_check(seed: u64, samples: usize) -> GradCheck {
    use opcap::encoder::ImageInput;
    use opcap::model::{Model, PairInput, Targets};
    use opcap::nn::Params;
    use opcap::training::{AlphaMode, LossConfig};

    let vocab_size = 11;
    let model = Model::new(tiny_model_config(), vocab_size, seed).unwrap();
    let mut r = rng(seed ^ 0xabc);
    let img = |r: &mut ChaCha8Rng| ImageInput {
        height: 8,
        width: 8,
        data: (0..3 * 64).map(|_| r.random_range(0.0..1.0)).collect(),
    };
    let (a, b) = (img(&mut r), img(&mut r));
    let caption = [1u32, 5, 7, 6, 2, 0];
    let sg = [4u32, 8, 9, 2, 0, 0, 0];
    // Large regularisers so their gradients are visible in the check.
    let cfg = LossConfig {
        lambda_l1: 0.3,
        lambda_ent: 0.2,
        alpha_mode: AlphaMode::LinearInt(0.6),
        ..LossConfig::default()
    };
    let alpha = Some(0.6);
    let targets = Targets {
        caption: &caption,
        scene_graph: Some(&sg),
    };
    let f = |m: &Model| m.loss(PairInput::Images(&a, &b), targets, &cfg, alpha, None).unwrap().total;
    let mut grad = model.zeros_like();
    model
        .loss(PairInput::Images(&a, &b), targets, &cfg, alpha, Some(&mut grad))
        .unwrap();

    let names: Vec<(String, usize)> = model.params().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let grads: Vec<Vec<f64>> = grad.params().iter().map(|(_, t)| t.data.clone()).collect();
    let h = 1e-5;
    let mut out = GradCheck {
        params: model.num_params(),
        checked: 0,
        max_rel: 0.0,
        worst: String::new(),
    };
    let mut probe = model.clone();
    for k in 0..samples {
        let ti = k % names.len();
        let idx = r.random_range(0..names[ti].1);
        let orig = probe.params_mut()[ti].data[idx];
        probe.params_mut()[ti].data[idx] = orig + h;
        let up = f(&probe);
        probe.params_mut()[ti].data[idx] = orig - h;
        let down = f(&probe);
        probe.params_mut()[ti].data[idx] = orig;
        let fd = (up - down) / (2.0 * h);
        let g = grads[ti][idx];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
        out.checked += 1;
        if rel > out.max_rel {
            out.max_rel = rel;
            out.worst = format!("{}[{idx}]: backprop {g:e}, finite difference {fd:e}", names[ti].0);
        }
    }
    out
}

// ---- data and configs -------------------------------------------------------

/// A freshly generated synthetic dataset in a temporary directory.
pub fn dataset(count: usize, seed: u64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let cfg = opcap::synthetic::GeneratorConfig {
        count,
        seed,
        ..Default::default()
    };
    opcap::synthetic::generate_dataset(&cfg, dir.path()).unwrap();
    dir
}

/// Small model on 64x64 images, quick enough for debug-profile tests.
pub fn quick_config() -> opcap::training::TrainConfig {
    use opcap::encoder::ConvSpec;
    let mut cfg = opcap::training::TrainConfig {
        epochs: 3,
        batch_size: 8,
        checkpoint_every: 0,
        ..Default::default()
    };
    cfg.model.conv = vec![
        ConvSpec { channels: 8, kernel: 4, stride: 4 },
        ConvSpec { channels: 16, kernel: 2, stride: 2 },
    ];
    cfg.model.attention_hidden = 16;
    cfg.model.embed = 16;
    cfg.model.hidden = 32;
    cfg.model.attention_dim = 16;
    cfg.model.sg_embed = 16;
    cfg.model.sg_hidden = 32;
    cfg.optimizer = opcap::training::OptimizerConfig::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    cfg.lr.initial = 0.003;
    cfg
}
