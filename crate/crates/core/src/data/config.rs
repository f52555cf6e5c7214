use super::DataError;

/// Parameters of the synthetic CTR log generator.
///
/// Labels follow `p = sigmoid((w_int·s̄ + w_prof·affinity[segment][category] + bias) / temperature)`
/// where `s̄` is the mean cosine between the candidate's content vector and
/// its five most similar lifelong-history items.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub num_users: u32,
    pub num_items: u32,
    pub clusters: u32,
    pub d_m: u32,
    pub l_max_u: u32,
    pub l_max_l: u32,
    /// Length of the candidate-specific subsequence returned by GSU retrieval.
    pub l_bc: u32,
    pub candidates_per_request: u32,
    /// Upper bound on the number of interest clusters per user.
    pub interests_per_user: u32,
    pub profile_segments: u32,
    pub activity_levels: u32,
    pub min_history: u32,
    /// Norm of the Gaussian perturbation added to a cluster centre.
    pub item_noise: f64,
    /// Zipf exponent of item popularity inside a cluster.
    pub popularity_skew: f64,
    /// Probability that a candidate is drawn from one of the user's interests.
    pub in_interest_rate: f64,
    pub label_temperature: f64,
    pub w_int: f64,
    pub w_prof: f64,
    pub bias: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    /// Desk scale: 50k users × 20 candidates ≈ 1M impressions.
    fn default() -> Self {
        GenConfig {
            num_users: 50_000,
            num_items: 20_000,
            clusters: 32,
            d_m: 32,
            l_max_u: 64,
            l_max_l: 512,
            l_bc: 16,
            candidates_per_request: 20,
            interests_per_user: 8,
            profile_segments: 8,
            activity_levels: 4,
            min_history: 32,
            item_noise: 0.5,
            popularity_skew: 0.8,
            in_interest_rate: 0.5,
            label_temperature: 1.0,
            w_int: 4.0,
            w_prof: 1.0,
            bias: -2.5,
            seed: 1,
        }
    }
}

/// Names accepted in `[data]` config sections, in file order.
pub const GEN_CONFIG_KEYS: &[&str] = &[
    "num_users",
    "num_items",
    "clusters",
    "d_m",
    "l_max_u",
    "l_max_l",
    "l_bc",
    "candidates_per_request",
    "interests_per_user",
    "profile_segments",
    "activity_levels",
    "min_history",
    "item_noise",
    "popularity_skew",
    "in_interest_rate",
    "label_temperature",
    "w_int",
    "w_prof",
    "bias",
    "seed",
];

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Config(m));
        if self.clusters < 1 || self.num_items < self.clusters {
            return err(format!(
                "need num_items ({}) >= clusters ({}) >= 1",
                self.num_items, self.clusters
            ));
        }
        if self.d_m < 1 {
            return err("d_m must be at least 1".into());
        }
        if self.l_bc > self.l_max_l {
            return err(format!("l_bc ({}) exceeds l_max_l ({})", self.l_bc, self.l_max_l));
        }
        if self.min_history > self.l_max_l {
            return err(format!(
                "min_history ({}) exceeds l_max_l ({})",
                self.min_history, self.l_max_l
            ));
        }
        if self.interests_per_user < 1 || self.interests_per_user > self.clusters {
            return err(format!(
                "interests_per_user must lie in 1..={}",
                self.clusters
            ));
        }
        if self.profile_segments < 1 || self.activity_levels < 1 {
            return err("profile_segments and activity_levels must be positive".into());
        }
        if self.num_items as u64 >= super::PAD as u64 {
            return err("num_items collides with the pad sentinel".into());
        }
        let floats = [
            ("item_noise", self.item_noise),
            ("popularity_skew", self.popularity_skew),
            ("in_interest_rate", self.in_interest_rate),
            ("label_temperature", self.label_temperature),
            ("w_int", self.w_int),
            ("w_prof", self.w_prof),
            ("bias", self.bias),
        ];
        for (name, v) in floats {
            if !v.is_finite() {
                return err(format!("{name} must be finite"));
            }
        }
        if self.item_noise < 0.0 || self.label_temperature <= 0.0 {
            return err("item_noise must be >= 0 and label_temperature > 0".into());
        }
        if !(0.0..=1.0).contains(&self.in_interest_rate) {
            return err("in_interest_rate must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), DataError> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, DataError> {
            v.trim()
                .parse()
                .map_err(|_| DataError::Config(format!("invalid value `{v}` for `{key}`")))
        }
        match key {
            "num_users" => self.num_users = p(key, value)?,
            "num_items" => self.num_items = p(key, value)?,
            "clusters" => self.clusters = p(key, value)?,
            "d_m" => self.d_m = p(key, value)?,
            "l_max_u" => self.l_max_u = p(key, value)?,
            "l_max_l" => self.l_max_l = p(key, value)?,
            "l_bc" => self.l_bc = p(key, value)?,
            "candidates_per_request" => self.candidates_per_request = p(key, value)?,
            "interests_per_user" => self.interests_per_user = p(key, value)?,
            "profile_segments" => self.profile_segments = p(key, value)?,
            "activity_levels" => self.activity_levels = p(key, value)?,
            "min_history" => self.min_history = p(key, value)?,
            "item_noise" => self.item_noise = p(key, value)?,
            "popularity_skew" => self.popularity_skew = p(key, value)?,
            "in_interest_rate" => self.in_interest_rate = p(key, value)?,
            "label_temperature" => self.label_temperature = p(key, value)?,
            "w_int" => self.w_int = p(key, value)?,
            "w_prof" => self.w_prof = p(key, value)?,
            "bias" => self.bias = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            other => {
                return Err(DataError::Config(format!(
                    "unknown key `{other}`; valid keys: {}",
                    GEN_CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// All fields as `key = value` pairs, in [`GEN_CONFIG_KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("num_users", self.num_users.to_string()),
            ("num_items", self.num_items.to_string()),
            ("clusters", self.clusters.to_string()),
            ("d_m", self.d_m.to_string()),
            ("l_max_u", self.l_max_u.to_string()),
            ("l_max_l", self.l_max_l.to_string()),
            ("l_bc", self.l_bc.to_string()),
            ("candidates_per_request", self.candidates_per_request.to_string()),
            ("interests_per_user", self.interests_per_user.to_string()),
            ("profile_segments", self.profile_segments.to_string()),
            ("activity_levels", self.activity_levels.to_string()),
            ("min_history", self.min_history.to_string()),
            ("item_noise", self.item_noise.to_string()),
            ("popularity_skew", self.popularity_skew.to_string()),
            ("in_interest_rate", self.in_interest_rate.to_string()),
            ("label_temperature", self.label_temperature.to_string()),
            ("w_int", self.w_int.to_string()),
            ("w_prof", self.w_prof.to_string()),
            ("bias", self.bias.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Cardinalities of the non-behavioural fields, in token order:
    /// user segment, user activity, candidate item id, candidate category.
    pub fn field_cardinalities(&self) -> Vec<usize> {
        vec![
            self.profile_segments as usize,
            self.activity_levels as usize,
            self.num_items as usize,
            self.clusters as usize,
        ]
    }

    pub fn impressions(&self) -> u64 {
        self.num_users as u64 * self.candidates_per_request as u64
    }
}

pub const FIELD_NAMES: &[&str] = &["user_segment", "user_activity", "cand_item", "cand_category"];
