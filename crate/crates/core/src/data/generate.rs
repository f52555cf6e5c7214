use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::Gamma;

use super::catalog::{dot, Catalog};
use super::{Candidate, DataError, GenConfig, Request, PAD};
use crate::par::{self, Execution};
use crate::seed;

/// Number of most-similar history items averaged into the interaction signal.
pub const INTERACTION_TOP: usize = 5;

/// The generator's ground-truth click model.
#[derive(Debug, Clone)]
pub struct LabelModel {
    /// profile_segments × clusters, entries in [-1, 1].
    pub affinity: Vec<f64>,
    clusters: usize,
    w_int: f64,
    w_prof: f64,
    bias: f64,
    temperature: f64,
}

impl LabelModel {
    pub fn new(cfg: &GenConfig) -> Self {
        let mut rng = seed::rng(cfg.seed, "profile_affinity", 0);
        let n = (cfg.profile_segments * cfg.clusters) as usize;
        LabelModel {
            affinity: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            clusters: cfg.clusters as usize,
            w_int: cfg.w_int,
            w_prof: cfg.w_prof,
            bias: cfg.bias,
            temperature: cfg.label_temperature,
        }
    }

    pub fn profile_term(&self, segment: u32, category: u32) -> f64 {
        self.affinity[segment as usize * self.clusters + category as usize]
    }

    /// Click probability of `candidate` for the user owning `lifelong`.
    pub fn probability(&self, catalog: &Catalog, segment: u32, lifelong: &[u32], candidate: u32) -> f64 {
        let s = interaction_signal(catalog, lifelong, candidate);
        let z = self.w_int * s + self.w_prof * self.profile_term(segment, catalog.category(candidate)) + self.bias;
        1.0 / (1.0 + (-z / self.temperature).exp())
    }

    pub fn request_probabilities(&self, catalog: &Catalog, req: &Request) -> Vec<f64> {
        req.candidates
            .iter()
            .map(|c| self.probability(catalog, req.user_fields[0], &req.lifelong_seq, c.item_id as u32))
            .collect()
    }
}

/// Mean cosine between `candidate` and its [`INTERACTION_TOP`] most similar
/// history items (fewer when the history is shorter; 0 when empty).
pub fn interaction_signal(catalog: &Catalog, history: &[u32], candidate: u32) -> f64 {
    let c = catalog.content_row(candidate);
    let mut sims: Vec<f64> = history
        .iter()
        .filter(|&&i| i != PAD)
        .map(|&i| dot(c, catalog.content_row(i)))
        .collect();
    if sims.is_empty() {
        return 0.0;
    }
    sims.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let k = sims.len().min(INTERACTION_TOP);
    sims[..k].iter().sum::<f64>() / k as f64
}

/// Precomputed samplers shared by every user.
struct Sampler {
    members: Vec<Vec<u32>>,
    popularity: Vec<WeightedIndex<f64>>,
}

impl Sampler {
    fn new(cfg: &GenConfig, catalog: &Catalog) -> Self {
        let members = catalog.cluster_members();
        let popularity = members
            .iter()
            .map(|m| {
                WeightedIndex::new((0..m.len()).map(|r| 1.0 / ((r + 1) as f64).powf(cfg.popularity_skew)))
                    .expect("non-empty cluster")
            })
            .collect();
        Sampler { members, popularity }
    }

    fn item<R: Rng>(&self, rng: &mut R, cluster: usize) -> u32 {
        self.members[cluster][self.popularity[cluster].sample(rng)]
    }
}

fn generate_user(cfg: &GenConfig, catalog: &Catalog, sampler: &Sampler, labels: &LabelModel, user: u32) -> Request {
    let mut rng = seed::rng(cfg.seed, "user", user as u64);
    let c = cfg.clusters as usize;

    let n_int = rng.gen_range(1..=cfg.interests_per_user as usize);
    let interests = rand::seq::index::sample(&mut rng, c, n_int).into_vec();
    let gamma = Gamma::new(1.0, 1.0).expect("valid gamma");
    let weights: Vec<f64> = (0..n_int).map(|_| gamma.sample(&mut rng) + 1e-3).collect();
    let pick = WeightedIndex::new(&weights).expect("positive weights");

    let len = rng.gen_range(cfg.min_history..=cfg.l_max_l) as usize;
    let history: Vec<u32> = (0..len)
        .map(|_| {
            let cluster = interests[pick.sample(&mut rng)];
            sampler.item(&mut rng, cluster)
        })
        .collect();

    let segment = rng.gen_range(0..cfg.profile_segments);
    let span = (cfg.l_max_l - cfg.min_history + 1) as usize;
    let activity = ((len - cfg.min_history as usize) * cfg.activity_levels as usize / span) as u32;

    let mut lifelong = history.clone();
    lifelong.resize(cfg.l_max_l as usize, PAD);
    let short_len = len.min(cfg.l_max_u as usize);
    let mut short = history[len - short_len..].to_vec();
    short.resize(cfg.l_max_u as usize, PAD);

    let candidates = (0..cfg.candidates_per_request)
        .map(|_| {
            let cluster = if rng.gen_bool(cfg.in_interest_rate) {
                interests[pick.sample(&mut rng)]
            } else {
                rng.gen_range(0..c)
            };
            let item = sampler.item(&mut rng, cluster);
            let p = labels.probability(catalog, segment, &history, item);
            Candidate {
                item_id: item as u64,
                fields: vec![item, catalog.category(item)],
                label: rng.gen_bool(p) as u8,
            }
        })
        .collect();

    Request {
        user_id: user as u64,
        user_fields: vec![segment, activity],
        short_seq: short,
        lifelong_seq: lifelong,
        candidates,
    }
}

/// One request per user, in user-id order. Each user draws from its own
/// seed stream, so the output is independent of how the work is scheduled.
pub fn generate_requests(cfg: &GenConfig, catalog: &Catalog) -> Result<Vec<Request>, DataError> {
    generate_requests_with(cfg, catalog, Execution::Parallel)
}

pub fn generate_requests_with(cfg: &GenConfig, catalog: &Catalog, exec: Execution) -> Result<Vec<Request>, DataError> {
    cfg.validate()?;
    if catalog.num_items != cfg.num_items as usize || catalog.d_m != cfg.d_m as usize {
        return Err(DataError::Config("catalog does not match the generator config".into()));
    }
    let sampler = Sampler::new(cfg, catalog);
    let labels = LabelModel::new(cfg);
    let users: Vec<u32> = (0..cfg.num_users).collect();
    Ok(par::map(exec, &users, |&u| generate_user(cfg, catalog, &sampler, &labels, u)))
}

/// Lazily yields requests one user at a time.
pub fn request_stream<'a>(cfg: &'a GenConfig, catalog: &'a Catalog) -> Result<impl Iterator<Item = Request> + 'a, DataError> {
    cfg.validate()?;
    let sampler = Sampler::new(cfg, catalog);
    let labels = LabelModel::new(cfg);
    Ok((0..cfg.num_users).map(move |u| generate_user(cfg, catalog, &sampler, &labels, u)))
}
