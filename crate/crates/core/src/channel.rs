//! Frame layouts, Rayleigh block fading and QPSK payloads.
//!
//! A frame is `L` parallel resource blocks. Layer `b` (1-based) holds
//! `K_(b)` users, each sending `D_(b)` copies on disjoint blocks, so that
//! `D_(b) K_(b) = L` and every block carries exactly one signal per layer.
//! Within a layer users are striped contiguously: user `j` gets blocks
//! `j*D .. (j+1)*D` (0-based).
//!
//! Power is normalised to `P = sigma_h^2 = 1` and `N0 = 1/snr`; the SINR only
//! depends on these through `snr = P sigma_h^2 / N0`.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{Domain, StreamFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// 1-based layer index; layers are decoded in increasing order.
    pub index: usize,
    pub copies: usize,
    pub users: usize,
    /// Co-channel signals left once every lower layer is cancelled: `B - b`.
    pub interferers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSlot {
    pub layer: usize,
    /// 0-based block indices.
    pub blocks: Vec<usize>,
}

/// The layered repetition structure of one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "LayoutDescription", try_from = "LayoutDescription")]
pub struct FrameLayout {
    blocks: usize,
    layers: Vec<LayerSpec>,
    users: Vec<UserSlot>,
    // block -> users on it, ordered by layer
    block_users: Vec<Vec<usize>>,
}

/// Wire form of a layout: `{"L": 4, "layers": [{"D": 4, "K": 1}, ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDescription {
    #[serde(rename = "L")]
    pub blocks: usize,
    pub layers: Vec<LayerDescription>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDescription {
    #[serde(rename = "D")]
    pub copies: usize,
    #[serde(rename = "K")]
    pub users: usize,
}

impl From<FrameLayout> for LayoutDescription {
    fn from(layout: FrameLayout) -> Self {
        Self {
            blocks: layout.blocks,
            layers: layout
                .layers
                .iter()
                .map(|l| LayerDescription {
                    copies: l.copies,
                    users: l.users,
                })
                .collect(),
        }
    }
}

impl TryFrom<LayoutDescription> for FrameLayout {
    type Error = Error;

    fn try_from(desc: LayoutDescription) -> Result<Self> {
        let specs: Vec<(usize, usize)> = desc.layers.iter().map(|l| (l.copies, l.users)).collect();
        let layout = build_layout_custom(&specs)?;
        if layout.blocks != desc.blocks {
            return Err(Error::InvalidLayout(format!(
                "L = {} but layers imply L = {}",
                desc.blocks, layout.blocks
            )));
        }
        Ok(layout)
    }
}

/// Dyadic layout: layer `b` has `2^(b-1)` users with `L / 2^(b-1)` copies.
pub fn build_layout(blocks: usize, layers: usize) -> Result<FrameLayout> {
    if blocks == 0 || layers == 0 {
        return Err(Error::InvalidLayout("L and B must be positive".into()));
    }
    if layers > 63 || !blocks.is_multiple_of(1usize << (layers - 1)) {
        return Err(Error::InvalidLayout(format!(
            "L = {blocks} is not divisible by 2^(B-1) for B = {layers}"
        )));
    }
    let specs: Vec<(usize, usize)> = (0..layers).map(|i| (blocks >> i, 1usize << i)).collect();
    build_layout_custom(&specs)
}

/// Layout from explicit `(D, K)` pairs, lowest layer first.
pub fn build_layout_custom(specs: &[(usize, usize)]) -> Result<FrameLayout> {
    let Some(&(d0, k0)) = specs.first() else {
        return Err(Error::InvalidLayout("no layers given".into()));
    };
    let blocks = d0 * k0;
    if blocks == 0 {
        return Err(Error::InvalidLayout("D and K must be positive".into()));
    }
    let n_layers = specs.len();
    let mut layers = Vec::with_capacity(n_layers);
    let mut users = Vec::new();
    let mut block_users = vec![Vec::with_capacity(n_layers); blocks];
    let mut prev_copies = usize::MAX;
    for (i, &(copies, count)) in specs.iter().enumerate() {
        if copies == 0 || count == 0 {
            return Err(Error::InvalidLayout(format!(
                "layer {} has D or K = 0",
                i + 1
            )));
        }
        if copies * count != blocks {
            return Err(Error::InvalidLayout(format!(
                "layer {}: D*K = {} differs from L = {blocks}",
                i + 1,
                copies * count
            )));
        }
        if copies > prev_copies {
            return Err(Error::InvalidLayout(format!(
                "copies must be nonincreasing across layers (layer {} has {copies} > {prev_copies})",
                i + 1
            )));
        }
        prev_copies = copies;
        layers.push(LayerSpec {
            index: i + 1,
            copies,
            users: count,
            interferers: n_layers - 1 - i,
        });
        for j in 0..count {
            let k = users.len();
            let span: Vec<usize> = (j * copies..(j + 1) * copies).collect();
            for &l in &span {
                block_users[l].push(k);
            }
            users.push(UserSlot {
                layer: i + 1,
                blocks: span,
            });
        }
    }
    Ok(FrameLayout {
        blocks,
        layers,
        users,
        block_users,
    })
}

impl FrameLayout {
    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, b: usize) -> Option<&LayerSpec> {
        b.checked_sub(1).and_then(|i| self.layers.get(i))
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn user(&self, k: usize) -> Option<&UserSlot> {
        self.users.get(k)
    }

    pub fn users(&self) -> &[UserSlot] {
        &self.users
    }

    /// Users whose signals share block `l`, one per layer, in layer order.
    pub fn block_users(&self, l: usize) -> &[usize] {
        &self.block_users[l]
    }

    /// Global indices of the users in layer `b`.
    pub fn users_in_layer(&self, b: usize) -> impl Iterator<Item = usize> + '_ {
        self.users
            .iter()
            .enumerate()
            .filter(move |(_, u)| u.layer == b)
            .map(|(k, _)| k)
    }

    pub fn description(&self) -> LayoutDescription {
        self.clone().into()
    }
}

/// One realisation of every (block, user) channel gain in a frame.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    users: usize,
    gains: Vec<Complex64>,
    pub channel_variance: f64,
    pub noise_power: f64,
    pub signal_power: f64,
}

impl ChannelDraw {
    pub fn gain(&self, block: usize, user: usize) -> Complex64 {
        self.gains[block * self.users + user]
    }

    /// `X = |h|^2`.
    pub fn power(&self, block: usize, user: usize) -> f64 {
        self.gain(block, user).norm_sqr()
    }

    pub fn snr(&self) -> f64 {
        self.signal_power * self.channel_variance / self.noise_power
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }
}

pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub(crate) fn fill_gains<R: Rng + ?Sized>(rng: &mut R, gains: &mut [Complex64]) {
    for g in gains {
        *g = complex_gaussian(rng);
    }
}

/// Draws CN(0, 1) gains for every (block, user) pair. The result depends
/// only on `(seed, trial)`.
pub fn draw_channel(layout: &FrameLayout, snr: f64, seed: u64, trial: u64) -> Result<ChannelDraw> {
    if !(snr > 0.0) || !snr.is_finite() {
        return Err(domain(format!(
            "snr must be positive and finite, got {snr}"
        )));
    }
    let users = layout.user_count();
    let mut gains = vec![Complex64::new(0.0, 0.0); layout.blocks() * users];
    let mut rng = StreamFamily::new(seed, Domain::Trial).stream(trial);
    fill_gains(&mut rng, &mut gains);
    Ok(ChannelDraw {
        users,
        gains,
        channel_variance: 1.0,
        noise_power: 1.0 / snr,
        signal_power: 1.0,
    })
}

/// Gray-mapped unit-energy QPSK: bit pair `(b0, b1)` maps to
/// `((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)`.
pub fn qpsk_modulate(bits: &[bool]) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(2) {
        return Err(domain(format!(
            "QPSK needs an even number of bits, got {}",
            bits.len()
        )));
    }
    let a = std::f64::consts::FRAC_1_SQRT_2;
    Ok(bits
        .chunks_exact(2)
        .map(|p| {
            let re = if p[0] { -a } else { a };
            let im = if p[1] { -a } else { a };
            Complex64::new(re, im)
        })
        .collect())
}

/// A symbol-level permutation: `apply(s)[i] = s[perm[i]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    pub fn identity(len: usize) -> Self {
        Self {
            perm: (0..len).collect(),
        }
    }

    pub fn from_permutation(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(domain("not a permutation"));
            }
        }
        Ok(Self { perm })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn apply<T: Copy>(&self, input: &[T]) -> Vec<T> {
        assert_eq!(input.len(), self.perm.len());
        self.perm.iter().map(|&p| input[p]).collect()
    }

    /// Deinterleave: `invert(apply(s)) == s`.
    pub fn invert<T: Copy + Default>(&self, input: &[T]) -> Vec<T> {
        assert_eq!(input.len(), self.perm.len());
        let mut out = vec![T::default(); input.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = input[i];
        }
        out
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        Self { perm: inv }
    }

    pub fn compose(&self, inner: &Interleaver) -> Self {
        // (self ∘ inner)(s) = self.apply(inner.apply(s))
        Self {
            perm: self.perm.iter().map(|&p| inner.perm[p]).collect(),
        }
    }
}

/// Uniformly random permutation for copy `l` of user `k`, deterministic in
/// `(seed, l, k)`.
pub fn make_interleaver(length: usize, seed: u64, l: usize, k: usize) -> Result<Interleaver> {
    if length == 0 {
        return Err(domain("interleaver length must be at least 1"));
    }
    let id = ((l as u64) << 32) | (k as u64 & 0xffff_ffff);
    let mut rng = StreamFamily::new(seed, Domain::Interleaver).stream(id);
    Ok(random_interleaver(length, &mut rng))
}

pub(crate) fn random_interleaver<R: Rng + ?Sized>(length: usize, rng: &mut R) -> Interleaver {
    let mut perm: Vec<usize> = (0..length).collect();
    perm.shuffle(rng);
    Interleaver { perm }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_invariants(layout: &FrameLayout) {
        let b = layout.layers().len();
        for l in 0..layout.blocks() {
            assert_eq!(layout.block_users(l).len(), b, "block {l}");
        }
        for spec in layout.layers() {
            assert_eq!(spec.copies * spec.users, layout.blocks());
            assert_eq!(spec.interferers, b - spec.index);
            let mut covered = vec![0; layout.blocks()];
            for k in layout.users_in_layer(spec.index) {
                for &blk in &layout.user(k).unwrap().blocks {
                    covered[blk] += 1;
                }
            }
            assert!(covered.iter().all(|&c| c == 1));
        }
        assert!(layout
            .layers()
            .windows(2)
            .all(|w| w[0].copies >= w[1].copies));
    }

    #[test]
    fn four_block_three_layer_layout() {
        let layout = build_layout(4, 3).unwrap();
        let copies: Vec<_> = layout.layers().iter().map(|l| l.copies).collect();
        let users: Vec<_> = layout.layers().iter().map(|l| l.users).collect();
        assert_eq!(copies, vec![4, 2, 1]);
        assert_eq!(users, vec![1, 2, 4]);
        assert_eq!(layout.user_count(), 7);
        // L_2 = {1,2}, L_3 = {3,4} in 1-based block numbers
        assert_eq!(layout.user(1).unwrap().blocks, vec![0, 1]);
        assert_eq!(layout.user(2).unwrap().blocks, vec![2, 3]);
        // U_1 \ {user 1} = {2, 4} (1-based user ids)
        assert_eq!(layout.block_users(0), &[0, 1, 3]);
        check_invariants(&layout);
    }

    #[test]
    fn degenerate_and_larger_layouts() {
        let oma = build_layout(8, 1).unwrap();
        assert_eq!(oma.layers().len(), 1);
        assert_eq!(oma.user_count(), 1);
        assert_eq!(oma.layers()[0].copies, 8);
        let l16 = build_layout(16, 3).unwrap();
        let copies: Vec<_> = l16.layers().iter().map(|l| l.copies).collect();
        assert_eq!(copies, vec![16, 8, 4]);
        check_invariants(&l16);
        assert!(matches!(build_layout(6, 3), Err(Error::InvalidLayout(_))));
        assert!(build_layout(0, 1).is_err());
    }

    #[test]
    fn custom_layouts() {
        let a = build_layout_custom(&[(4, 1), (2, 2), (1, 4)]).unwrap();
        assert_eq!(a, build_layout(4, 3).unwrap());
        let b = build_layout_custom(&[(6, 2), (4, 3)]).unwrap();
        assert_eq!(b.blocks(), 12);
        check_invariants(&b);
        assert!(build_layout_custom(&[(4, 1), (3, 1)]).is_err());
        assert!(build_layout_custom(&[(2, 2), (4, 1)]).is_err());
        assert!(build_layout_custom(&[]).is_err());
    }

    #[test]
    fn layout_json_shape() {
        let layout = build_layout(4, 3).unwrap();
        let json = serde_json::to_value(&layout).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"L": 4, "layers": [{"D": 4, "K": 1}, {"D": 2, "K": 2}, {"D": 1, "K": 4}]})
        );
        let back: FrameLayout = serde_json::from_value(json).unwrap();
        assert_eq!(back, layout);
        let bad = serde_json::json!({"L": 5, "layers": [{"D": 4, "K": 1}]});
        assert!(serde_json::from_value::<FrameLayout>(bad).is_err());
    }

    #[test]
    fn channel_draws_are_deterministic() {
        let layout = build_layout(4, 3).unwrap();
        let a = draw_channel(&layout, 4.0, 11, 5).unwrap();
        let b = draw_channel(&layout, 4.0, 11, 5).unwrap();
        let c = draw_channel(&layout, 4.0, 11, 6).unwrap();
        assert_eq!(a.gains(), b.gains());
        assert_ne!(a.gains(), c.gains());
        assert!((a.noise_power - 0.25).abs() < 1e-15);
        assert!((a.snr() - 4.0).abs() < 1e-12);
        assert!(draw_channel(&layout, 0.0, 1, 1).is_err());
    }

    #[test]
    fn rayleigh_power_statistics() {
        // 10^6 draws of |h|^2 against Exp(1).
        let layout = build_layout(1, 1).unwrap();
        let n = 1_000_000u64;
        let mut xs: Vec<f64> = (0..n)
            .map(|t| draw_channel(&layout, 1.0, 3, t).unwrap().power(0, 0))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() < 0.004, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
        xs.sort_by(f64::total_cmp);
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - (-x).exp();
                (f - i as f64 / n as f64)
                    .abs()
                    .max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.005, "ks {ks}");
    }

    #[test]
    fn qpsk_constellation() {
        let s = qpsk_modulate(&[false, false]).unwrap();
        let a = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(s[0], Complex64::new(a, a));
        let all = qpsk_modulate(&[false, false, false, true, true, true, true, false]).unwrap();
        for sym in &all {
            assert!((sym.norm_sqr() - 1.0).abs() < 1e-15);
        }
        // Gray: ring order 00, 01, 11, 10 differs in one bit between neighbours,
        // and neighbours sit at distance sqrt(2).
        for i in 0..4 {
            let d = (all[i] - all[(i + 1) % 4]).norm();
            assert!((d - 2f64.sqrt()).abs() < 1e-12);
        }
        assert_eq!(qpsk_modulate(&vec![true; 512]).unwrap().len(), 256);
        assert!(qpsk_modulate(&[true]).is_err());
    }

    #[test]
    fn interleaver_round_trip() {
        let il = make_interleaver(256, 9, 2, 3).unwrap();
        let data: Vec<usize> = (0..256).collect();
        assert_eq!(il.invert(&il.apply(&data)), data);
        assert_eq!(il.inverse().apply(&il.apply(&data)), data);
        assert_eq!(il.compose(&il.inverse()), Interleaver::identity(256));
        assert_eq!(il, make_interleaver(256, 9, 2, 3).unwrap());
        assert_ne!(il, make_interleaver(256, 9, 3, 2).unwrap());
        assert_ne!(il, make_interleaver(256, 9, 2, 4).unwrap());
        assert!(make_interleaver(0, 1, 0, 0).is_err());
        assert!(Interleaver::from_permutation(vec![0, 0]).is_err());
    }
}
