//! Little-endian binary dataset file:
//!
//! ```text
//! "ESTD" | version u32 = 1
//! GenConfig: 12 × u32, 7 × f64, seed u64 (field order of GEN_CONFIG_KEYS)
//! catalog:   num_items u32 | d_m u32 | content f32[num_items·d_m] | category u32[num_items]
//! requests:  count u64, then per request
//!            user_id u64 | n_user_fields u32 | n_short u32 | n_lifelong u32
//!            | n_candidates u32 | n_cand_fields u32
//!            | user_fields u32[] | short u32[] | lifelong u32[]   (pads = 0xFFFFFFFF)
//!            | n_candidates × (item u64 | fields u32[n_cand_fields] | label u8)
//! ```

use std::io::Write;
use std::path::Path;

use super::catalog::cluster_centers;
use super::{Candidate, Catalog, DataError, Dataset, GenConfig, Request, PAD};

pub const MAGIC: &[u8; 4] = b"ESTD";
pub const VERSION: u32 = 1;

pub fn encode(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let c = &ds.config;
    for v in [
        c.num_users,
        c.num_items,
        c.clusters,
        c.d_m,
        c.l_max_u,
        c.l_max_l,
        c.l_bc,
        c.candidates_per_request,
        c.interests_per_user,
        c.profile_segments,
        c.activity_levels,
        c.min_history,
    ] {
        put_u32(&mut out, v);
    }
    for v in [
        c.item_noise,
        c.popularity_skew,
        c.in_interest_rate,
        c.label_temperature,
        c.w_int,
        c.w_prof,
        c.bias,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());

    let cat = &ds.catalog;
    put_u32(&mut out, cat.num_items as u32);
    put_u32(&mut out, cat.d_m as u32);
    for &v in &cat.content {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &cat.item_category {
        put_u32(&mut out, v);
    }

    out.extend_from_slice(&(ds.requests.len() as u64).to_le_bytes());
    for r in &ds.requests {
        out.extend_from_slice(&r.user_id.to_le_bytes());
        let n_cand_fields = r.candidates.first().map_or(0, |c| c.fields.len());
        for v in [
            r.user_fields.len(),
            r.short_seq.len(),
            r.lifelong_seq.len(),
            r.candidates.len(),
            n_cand_fields,
        ] {
            put_u32(&mut out, v as u32);
        }
        for seq in [&r.user_fields, &r.short_seq, &r.lifelong_seq] {
            for &v in seq.iter() {
                put_u32(&mut out, v);
            }
        }
        for cand in &r.candidates {
            out.extend_from_slice(&cand.item_id.to_le_bytes());
            for &v in &cand.fields {
                put_u32(&mut out, v);
            }
            out.push(cand.label);
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.buf.len() - self.pos < n {
            return Err(DataError::Format {
                offset: self.pos as u64,
                msg: format!("truncated: need {n} bytes, {} remain", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, DataError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn fail<T>(&self, at: usize, msg: impl Into<String>) -> Result<T, DataError> {
        Err(DataError::Format {
            offset: at as u64,
            msg: msg.into(),
        })
    }

    fn ids(&mut self, n: usize, num_items: u32) -> Result<Vec<u32>, DataError> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let at = self.pos;
            let id = self.u32()?;
            if id != PAD && id >= num_items {
                return self.fail(at, format!("item id {id} out of range (num_items {num_items})"));
            }
            v.push(id);
        }
        Ok(v)
    }
}

pub fn decode(buf: &[u8]) -> Result<Dataset, DataError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return r.fail(0, "bad magic (expected \"ESTD\")");
    }
    let version = r.u32()?;
    if version != VERSION {
        return r.fail(4, format!("unsupported version {version}"));
    }
    let cfg_at = r.pos;
    let mut u = [0u32; 12];
    for v in u.iter_mut() {
        *v = r.u32()?;
    }
    let mut f = [0f64; 7];
    for v in f.iter_mut() {
        *v = r.f64()?;
    }
    let config = GenConfig {
        num_users: u[0],
        num_items: u[1],
        clusters: u[2],
        d_m: u[3],
        l_max_u: u[4],
        l_max_l: u[5],
        l_bc: u[6],
        candidates_per_request: u[7],
        interests_per_user: u[8],
        profile_segments: u[9],
        activity_levels: u[10],
        min_history: u[11],
        item_noise: f[0],
        popularity_skew: f[1],
        in_interest_rate: f[2],
        label_temperature: f[3],
        w_int: f[4],
        w_prof: f[5],
        bias: f[6],
        seed: r.u64()?,
    };
    if let Err(e) = config.validate() {
        return r.fail(cfg_at, format!("invalid generator config: {e}"));
    }

    let cat_at = r.pos;
    let num_items = r.u32()?;
    let d_m = r.u32()?;
    if num_items != config.num_items || d_m != config.d_m {
        return r.fail(cat_at, "catalog dimensions disagree with the generator config");
    }
    let n = num_items as usize * d_m as usize;
    // bound allocations by what the buffer can actually hold
    if n.saturating_mul(4) > buf.len() - r.pos {
        return r.fail(r.pos, "truncated catalog content");
    }
    let mut content = Vec::with_capacity(n);
    for _ in 0..n {
        content.push(r.f32()?);
    }
    let mut item_category = Vec::with_capacity(num_items as usize);
    for _ in 0..num_items {
        let at = r.pos;
        let c = r.u32()?;
        if c >= config.clusters {
            return r.fail(at, format!("category {c} out of range"));
        }
        item_category.push(c);
    }
    let catalog = Catalog {
        num_items: num_items as usize,
        d_m: d_m as usize,
        content,
        item_category,
        cluster_centers: cluster_centers(&config)
            .iter()
            .flatten()
            .map(|&x| x as f32)
            .collect(),
    };

    let count = r.u64()?;
    let mut requests = Vec::new();
    for _ in 0..count {
        let user_id = r.u64()?;
        let at = r.pos;
        let n_user = r.u32()? as usize;
        let n_short = r.u32()? as usize;
        let n_life = r.u32()? as usize;
        let n_cand = r.u32()? as usize;
        let n_cand_fields = r.u32()? as usize;
        // u128 so hostile counts cannot overflow the bound itself
        let need = (n_user + n_short + n_life) as u128 * 4 + n_cand as u128 * (9 + 4 * n_cand_fields as u128);
        if need > (buf.len() - r.pos) as u128 {
            return r.fail(at, "request counts exceed the remaining bytes");
        }
        let mut user_fields = Vec::with_capacity(n_user);
        for _ in 0..n_user {
            user_fields.push(r.u32()?);
        }
        let short_seq = r.ids(n_short, num_items)?;
        let lifelong_seq = r.ids(n_life, num_items)?;
        let mut candidates = Vec::with_capacity(n_cand);
        for _ in 0..n_cand {
            let at = r.pos;
            let item_id = r.u64()?;
            if item_id >= num_items as u64 {
                return r.fail(at, format!("candidate id {item_id} out of range"));
            }
            let mut fields = Vec::with_capacity(n_cand_fields);
            for _ in 0..n_cand_fields {
                fields.push(r.u32()?);
            }
            let at = r.pos;
            let label = r.u8()?;
            if label > 1 {
                return r.fail(at, format!("label {label} is not 0/1"));
            }
            candidates.push(Candidate { item_id, fields, label });
        }
        requests.push(Request {
            user_id,
            user_fields,
            short_seq,
            lifelong_seq,
            candidates,
        });
    }
    if r.pos != buf.len() {
        return r.fail(r.pos, format!("{} trailing bytes", buf.len() - r.pos));
    }
    Ok(Dataset {
        config,
        catalog,
        requests,
    })
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<(), DataError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(ds))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    decode(&std::fs::read(path)?)
}
