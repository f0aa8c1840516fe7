//! Uplink pilot transmission and the least-squares/interpolation baseline.
//!
//! Each user owns a comb of subcarriers (an arithmetic progression with a
//! common stride) on a subset of the pilot symbols. Users never share a
//! resource element, so a per-element least-squares division separates
//! them without any joint processing.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor4;

/// Pilot resources of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPilots {
    /// 1-based subcarrier indices.
    pub comb: Vec<usize>,
    /// 0-based pilot-symbol indices on which this user transmits.
    pub slots: Vec<usize>,
    /// `symbols[s][j]` is sent on `comb[j]` during `slots[s]`; unit modulus.
    pub symbols: Vec<Vec<Complex64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotGrid {
    pub subcarriers: usize,
    pub stride: usize,
    pub n_symbols: usize,
    pub users: Vec<UserPilots>,
}

impl PilotGrid {
    pub fn user(&self, u: usize) -> Result<&UserPilots> {
        self.users
            .get(u)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown user {u}")))
    }

    /// Effective comb size of user `u`.
    pub fn comb_len(&self, u: usize) -> Result<usize> {
        Ok(self.user(u)?.comb.len())
    }
}

fn qpsk(rng: &mut impl Rng) -> Complex64 {
    let q = rng.random_range(0..4u8);
    Complex64::from_polar(1.0, FRAC_PI_4 + FRAC_PI_2 * f64::from(q))
}

/// Allocates combs: user `u` (0-based) takes residue `u mod stride`, i.e. the
/// subcarriers `{u+1, u+1+stride, ...}`. When there are more users than
/// residues, the pilot symbols are split round-robin into
/// `ceil(U / stride)` groups and user `u` transmits only in group `u / stride`.
pub fn make_comb_pilots(
    n_users: usize,
    subcarriers: usize,
    stride: usize,
    n_symbols: usize,
    seed: u64,
) -> Result<PilotGrid> {
    if n_users == 0 || stride == 0 || n_symbols == 0 || subcarriers == 0 {
        return Err(Error::InvalidArgument("users, stride, symbols and subcarriers must be >= 1".into()));
    }
    if stride > subcarriers {
        return Err(Error::InvalidArgument(format!("stride {stride} exceeds {subcarriers} subcarriers")));
    }
    let groups = n_users.div_ceil(stride);
    if groups > n_symbols {
        return Err(Error::Infeasible(format!(
            "{n_users} users need {groups} pilot symbols with stride {stride}, only {n_symbols} available"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = (0..n_users)
        .map(|u| {
            let comb: Vec<usize> = (u % stride + 1..=subcarriers).step_by(stride).collect();
            let slots: Vec<usize> = (0..n_symbols).filter(|t| t % groups == u / stride).collect();
            let symbols = slots
                .iter()
                .map(|_| comb.iter().map(|_| qpsk(&mut rng)).collect())
                .collect();
            UserPilots { comb, slots, symbols }
        })
        .collect();
    Ok(PilotGrid { subcarriers, stride, n_symbols, users })
}

/// Received pilot observations `Y(t)`, one tensor per pilot symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedGrid {
    pub frames: Vec<ComplexTensor4>,
    pub noise_variance: f64,
    /// Mean target-signal power per occupied resource element.
    pub signal_power: f64,
    /// Mean interference power per occupied resource element.
    pub interference_power: f64,
    pub interference_channels: usize,
}

/// Impairments applied by [`synthesize_received`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Interference-to-signal ratio; `f64::NEG_INFINITY` disables interference.
    pub isr_db: f64,
}

/// Sum of `H^u S^u(t)` over the channels, with per-element mean power over
/// the resource elements the pilots occupy.
fn transmit(channels: &[ComplexTensor4], pilots: &PilotGrid) -> Result<(Vec<ComplexTensor4>, f64)> {
    let dims = channels[0].dims();
    if dims[2] != pilots.subcarriers {
        return Err(Error::Shape(format!(
            "channel has {} subcarriers, pilots span {}",
            dims[2], pilots.subcarriers
        )));
    }
    if channels.len() > pilots.users.len() {
        return Err(Error::Shape(format!(
            "{} channels but only {} pilot allocations",
            channels.len(),
            pilots.users.len()
        )));
    }
    let mut frames = vec![ComplexTensor4::zeros(dims)?; pilots.n_symbols];
    let mut occupied = vec![vec![false; dims[2]]; pilots.n_symbols];
    for (h, up) in channels.iter().zip(&pilots.users) {
        if h.dims() != dims {
            return Err(Error::Shape("channel dims differ between users".into()));
        }
        for (&t, syms) in up.slots.iter().zip(&up.symbols) {
            let frame = &mut frames[t];
            for (&k1, &s) in up.comb.iter().zip(syms) {
                let k = k1 - 1;
                occupied[t][k] = true;
                for p in 0..dims[3] {
                    for r in 0..dims[1] {
                        for cidx in 0..dims[0] {
                            let off = frame.offset(cidx, r, k, p);
                            frame.data_mut()[off] += h.data()[off] * s;
                        }
                    }
                }
            }
        }
    }
    let mut energy = 0.0;
    let mut count = 0usize;
    for (frame, occ) in frames.iter().zip(&occupied) {
        for (k, _) in occ.iter().enumerate().filter(|(_, &o)| o) {
            count += dims[0] * dims[1] * dims[3];
            for p in 0..dims[3] {
                for r in 0..dims[1] {
                    for cidx in 0..dims[0] {
                        energy += frame.get(cidx, r, k, p).norm_sqr();
                    }
                }
            }
        }
    }
    let power = if count == 0 { 0.0 } else { energy / count as f64 };
    Ok((frames, power))
}

fn add_awgn(frames: &mut [ComplexTensor4], variance: f64, rng: &mut impl Rng) {
    let sd = (variance / 2.0).sqrt();
    for f in frames {
        for z in f.data_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z += Complex64::new(sd * re, sd * im);
        }
    }
}

/// Independent seed for sub-stream `stream` of a master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over (seed, stream)
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Synthesizes `Y(t) = Σ_u H^u S^u(t) + N(t) + I(t)` for every pilot symbol.
///
/// Users transmit only on their own combs. Interference channels transmit
/// independent QPSK symbols on a comb layout built the same way as the
/// targets', scaled to `isr_db` relative to the target power. Noise variance
/// is the target power per occupied element divided by the linear SNR; when
/// the targets are identically zero a unit reference power is used.
pub fn synthesize_received(
    channels: &[ComplexTensor4],
    pilots: &PilotGrid,
    budget: LinkBudget,
    interference: &[ComplexTensor4],
    seed: u64,
) -> Result<ReceivedGrid> {
    if channels.is_empty() {
        return Err(Error::InvalidArgument("no target channels".into()));
    }
    let (mut frames, signal_power) = transmit(channels, pilots)?;
    let reference = if signal_power > 0.0 { signal_power } else { 1.0 };

    let mut interference_power = 0.0;
    if !interference.is_empty() && budget.isr_db.is_finite() {
        if interference.iter().any(|h| h.dims() != channels[0].dims()) {
            return Err(Error::Shape("interference dims differ from target dims".into()));
        }
        let grid = make_comb_pilots(
            interference.len(),
            pilots.subcarriers,
            pilots.stride,
            pilots.n_symbols,
            derive_seed(seed, 1),
        )?;
        let (iframes, ipow) = transmit(interference, &grid)?;
        if ipow > 0.0 {
            let target = reference * 10f64.powf(budget.isr_db / 10.0);
            let g = (target / ipow).sqrt();
            for (f, i) in frames.iter_mut().zip(&iframes) {
                for (a, b) in f.data_mut().iter_mut().zip(i.data()) {
                    *a += b * g;
                }
            }
            interference_power = target;
        }
    }

    let noise_variance = if budget.snr_db.is_finite() {
        reference / 10f64.powf(budget.snr_db / 10.0)
    } else if budget.snr_db < 0.0 {
        return Err(Error::InvalidArgument("snr_db must not be -inf".into()));
    } else {
        0.0
    };
    if noise_variance > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
        add_awgn(&mut frames, noise_variance, &mut rng);
    }
    Ok(ReceivedGrid {
        frames,
        noise_variance,
        signal_power,
        interference_power,
        interference_channels: interference.len(),
    })
}

/// Per-element least-squares comb estimate of user `u`, averaged over the
/// user's pilot symbols. Output dims `(n_col, n_row, |comb|, n_pol)`.
pub fn ls_comb_estimate(y: &ReceivedGrid, pilots: &PilotGrid, u: usize) -> Result<ComplexTensor4> {
    let up = pilots.user(u)?;
    let dims = y
        .frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("received grid has no frames".into()))?
        .dims();
    let mut out = ComplexTensor4::zeros([dims[0], dims[1], up.comb.len(), dims[3]])?;
    for (j, &k1) in up.comb.iter().enumerate() {
        let k = k1 - 1;
        let energy: f64 = up.symbols.iter().map(|s| s[j].norm_sqr()).sum();
        if energy == 0.0 {
            return Err(Error::Numerical(format!("zero pilot energy on subcarrier {k1}")));
        }
        for (&t, syms) in up.slots.iter().zip(&up.symbols) {
            let w = syms[j].conj() / energy;
            let frame = &y.frames[t];
            for p in 0..dims[3] {
                for r in 0..dims[1] {
                    for cidx in 0..dims[0] {
                        let v = frame.get(cidx, r, k, p) * w;
                        let o = out.offset(cidx, r, j, p);
                        out.data_mut()[o] += v;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Linear interpolation along the subcarrier mode from the comb to `1..=K`,
/// holding the first/last comb value flat outside the comb span.
pub fn linear_interpolate(h_comb: &ComplexTensor4, comb: &[usize], k_total: usize) -> Result<ComplexTensor4> {
    let [n1, n2, n3, n4] = h_comb.dims();
    if comb.len() != n3 {
        return Err(Error::Shape(format!("comb has {} entries, tensor {}", comb.len(), n3)));
    }
    if comb.len() < 2 {
        return Err(Error::InvalidArgument("linear interpolation needs at least two comb points".into()));
    }
    if comb.windows(2).any(|w| w[1] <= w[0]) || comb[0] == 0 || comb[comb.len() - 1] > k_total {
        return Err(Error::InvalidArgument("comb must be strictly increasing within 1..=K".into()));
    }
    // (left comb position, weight on the right neighbour) for every subcarrier
    let mut plan = Vec::with_capacity(k_total);
    let mut seg = 0;
    for k in 1..=k_total {
        if k <= comb[0] {
            plan.push((0, 0.0));
        } else if k >= comb[n3 - 1] {
            plan.push((n3 - 1, 0.0));
        } else {
            while comb[seg + 1] < k {
                seg += 1;
            }
            let w = (k - comb[seg]) as f64 / (comb[seg + 1] - comb[seg]) as f64;
            plan.push((seg, w));
        }
    }
    ComplexTensor4::from_fn([n1, n2, k_total, n4], |a, b, k, p| {
        let (j, w) = plan[k];
        let left = h_comb.get(a, b, j, p);
        if w == 0.0 {
            left
        } else {
            left * (1.0 - w) + h_comb.get(a, b, j + 1, p) * w
        }
    })
}

const DUMP_MAGIC: &[u8; 8] = b"CHRXGRD1";

impl ReceivedGrid {
    /// Binary dump: magic, then `T_p, n_col, n_row, K, n_pol` as u64, then
    /// every frame in tensor layout as interleaved (re, im) f64, all little-endian.
    pub fn write_dump(&self, mut w: impl Write) -> Result<()> {
        let dims = self.frames.first().map_or([0; 4], ComplexTensor4::dims);
        w.write_all(DUMP_MAGIC)?;
        for v in [self.frames.len(), dims[0], dims[1], dims[2], dims[3]] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for f in &self.frames {
            for z in f.data() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads the frames back from [`ReceivedGrid::write_dump`] output.
    pub fn read_dump(mut r: impl Read) -> Result<Vec<ComplexTensor4>> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::InvalidArgument("not a received-grid dump".into()));
        }
        let mut hdr = [0usize; 5];
        for h in &mut hdr {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *h = u64::from_le_bytes(b) as usize;
        }
        let dims = [hdr[1], hdr[2], hdr[3], hdr[4]];
        let n: usize = dims.iter().product();
        let mut frames = Vec::with_capacity(hdr[0]);
        for _ in 0..hdr[0] {
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 16];
                r.read_exact(&mut b)?;
                let re = f64::from_le_bytes(b[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(b[8..].try_into().expect("8 bytes"));
                data.push(Complex64::new(re, im));
            }
            frames.push(ComplexTensor4::from_vec(dims, data)?);
        }
        Ok(frames)
    }
}

/// Unit-modulus check used by tests and callers validating external grids.
pub fn is_unit_modulus(z: Complex64) -> bool {
    (z.norm() - 1.0).abs() < 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::relative_error;

    fn rand_tensor(dims: [usize; 4], seed: u64) -> ComplexTensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexTensor4::from_fn(dims, |_, _, _, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
        .unwrap()
    }

    fn noiseless() -> LinkBudget {
        LinkBudget { snr_db: f64::INFINITY, isr_db: f64::NEG_INFINITY }
    }

    #[test]
    fn comb_allocation_examples() {
        let g = make_comb_pilots(1, 8, 2, 1, 0).unwrap();
        assert_eq!(g.users[0].comb, vec![1, 3, 5, 7]);
        assert_eq!(g.comb_len(0).unwrap(), 4);

        let g = make_comb_pilots(2, 8, 2, 1, 0).unwrap();
        assert_eq!(g.users[0].comb, vec![1, 3, 5, 7]);
        assert_eq!(g.users[1].comb, vec![2, 4, 6, 8]);

        let g = make_comb_pilots(12, 384, 12, 1, 0).unwrap();
        assert!(g.users.iter().all(|u| u.comb.len() == 32));
        assert!(g.users.iter().flat_map(|u| u.symbols.iter().flatten()).all(|&s| is_unit_modulus(s)));

        assert!(matches!(make_comb_pilots(3, 8, 2, 1, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn resource_elements_are_disjoint_with_time_groups() {
        let g = make_comb_pilots(24, 384, 12, 2, 5).unwrap();
        let mut used = vec![vec![false; 384]; 2];
        for u in &g.users {
            assert_eq!(u.slots.len(), 1);
            for &t in &u.slots {
                for &k in &u.comb {
                    assert!(!used[t][k - 1]);
                    used[t][k - 1] = true;
                }
            }
        }
        assert!(used.iter().flatten().all(|&x| x));
    }

    #[test]
    fn noiseless_identity_pilots_reproduce_channel_on_comb() {
        let dims = [3, 2, 8, 2];
        let h = rand_tensor(dims, 1);
        let mut g = make_comb_pilots(1, 8, 2, 1, 0).unwrap();
        for s in g.users[0].symbols.iter_mut().flatten() {
            *s = Complex64::ONE;
        }
        let y = synthesize_received(std::slice::from_ref(&h), &g, noiseless(), &[], 0).unwrap();
        for &k in &g.users[0].comb {
            for p in 0..2 {
                for r in 0..2 {
                    for c in 0..3 {
                        assert_eq!(y.frames[0].get(c, r, k - 1, p), h.get(c, r, k - 1, p));
                    }
                }
            }
        }
        let est = ls_comb_estimate(&y, &g, 0).unwrap();
        let idx: Vec<usize> = g.users[0].comb.iter().map(|k| k - 1).collect();
        assert_eq!(est, h.select_mode3(&idx).unwrap());
    }

    #[test]
    fn noiseless_ls_recovers_every_user() {
        let dims = [2, 2, 12, 2];
        let hs: Vec<_> = (0..3).map(|u| rand_tensor(dims, 10 + u)).collect();
        let g = make_comb_pilots(3, 12, 3, 2, 4).unwrap();
        let y = synthesize_received(&hs, &g, noiseless(), &[], 0).unwrap();
        for (u, h) in hs.iter().enumerate() {
            let idx: Vec<usize> = g.users[u].comb.iter().map(|k| k - 1).collect();
            let est = ls_comb_estimate(&y, &g, u).unwrap();
            assert!(relative_error(&h.select_mode3(&idx).unwrap(), &est).unwrap() < 1e-20);
        }
    }

    #[test]
    fn user_estimate_ignores_other_users() {
        let dims = [2, 2, 8, 1];
        let a = rand_tensor(dims, 1);
        let g = make_comb_pilots(2, 8, 2, 1, 3).unwrap();
        let y1 = synthesize_received(&[a.clone(), rand_tensor(dims, 2)], &g, noiseless(), &[], 0).unwrap();
        let y2 = synthesize_received(&[a, rand_tensor(dims, 3)], &g, noiseless(), &[], 0).unwrap();
        assert_eq!(ls_comb_estimate(&y1, &g, 0).unwrap(), ls_comb_estimate(&y2, &g, 0).unwrap());
    }

    #[test]
    fn zero_channels_give_noise_plus_interference_only() {
        let dims = [2, 2, 8, 2];
        let zero = ComplexTensor4::zeros(dims).unwrap();
        let g = make_comb_pilots(2, 8, 2, 1, 0).unwrap();
        let intf = [rand_tensor(dims, 4), rand_tensor(dims, 5)];
        let budget = LinkBudget { snr_db: 3.0, isr_db: 0.0 };
        let y = synthesize_received(&[zero.clone(), zero], &g, budget, &intf, 17).unwrap();
        assert_eq!(y.signal_power, 0.0);

        // rebuild I(t) + N(t) from the same seed streams
        let ig = make_comb_pilots(2, 8, 2, 1, derive_seed(17, 1)).unwrap();
        let (mut expect, ipow) = transmit(&intf, &ig).unwrap();
        let gain = (1.0 / ipow).sqrt();
        for f in &mut expect {
            f.data_mut().iter_mut().for_each(|z| *z *= gain);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(17, 2));
        add_awgn(&mut expect, 10f64.powf(-0.3), &mut rng);
        for (a, b) in y.frames.iter().zip(&expect) {
            assert!(relative_error(b, a).unwrap() < 1e-28);
        }
    }

    #[test]
    fn zero_db_isr_balances_powers() {
        let dims = [4, 4, 48, 2];
        let hs: Vec<_> = (0..4).map(|u| rand_tensor(dims, 20 + u)).collect();
        let is: Vec<_> = (0..4).map(|u| rand_tensor(dims, 40 + u)).collect();
        let g = make_comb_pilots(4, 48, 4, 1, 1).unwrap();
        let budget = LinkBudget { snr_db: f64::INFINITY, isr_db: 0.0 };
        let y_sig = synthesize_received(&hs, &g, noiseless(), &[], 9).unwrap();
        let y_all = synthesize_received(&hs, &g, budget, &is, 9).unwrap();
        // 4*4*48*2 = 1536 elements per frame; use several frames' worth via 8 seeds
        let mut ps = 0.0;
        let mut pi = 0.0;
        for (a, b) in y_sig.frames.iter().zip(&y_all.frames) {
            for (s, t) in a.data().iter().zip(b.data()) {
                ps += s.norm_sqr();
                pi += (t - s).norm_sqr();
            }
        }
        assert!((pi / ps - 1.0).abs() < 0.01, "ratio {}", pi / ps);
        assert!((y_all.interference_power / y_all.signal_power - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snr_calibration_within_a_tenth_of_a_db() {
        let dims = [8, 4, 64, 2];
        let hs: Vec<_> = (0..4).map(|u| rand_tensor(dims, 60 + u)).collect();
        let g = make_comb_pilots(4, 64, 4, 2, 1).unwrap();
        let clean = synthesize_received(&hs, &g, noiseless(), &[], 5).unwrap();
        let noisy = synthesize_received(&hs, &g, LinkBudget { snr_db: 7.0, isr_db: f64::NEG_INFINITY }, &[], 5).unwrap();
        let mut pn = 0.0;
        let mut n = 0usize;
        for (a, b) in clean.frames.iter().zip(&noisy.frames) {
            for (s, t) in a.data().iter().zip(b.data()) {
                pn += (t - s).norm_sqr();
                n += 1;
            }
        }
        let measured = 10.0 * (clean.signal_power / (pn / n as f64)).log10();
        assert!((measured - 7.0).abs() < 0.1, "measured snr {measured}");
    }

    #[test]
    fn ls_variance_shrinks_with_pilot_symbols() {
        // AWGN only: the averaged estimate has variance sigma^2 / T_p
        let dims = [1, 1, 2, 1];
        let h = ComplexTensor4::from_fn(dims, |_, _, _, _| Complex64::ONE).unwrap();
        let g = make_comb_pilots(1, 2, 1, 4, 2).unwrap();
        let budget = LinkBudget { snr_db: 0.0, isr_db: f64::NEG_INFINITY };
        let mut acc = 0.0;
        let mut count = 0usize;
        for trial in 0..5000 {
            let y = synthesize_received(std::slice::from_ref(&h), &g, budget, &[], trial).unwrap();
            let est = ls_comb_estimate(&y, &g, 0).unwrap();
            for z in est.data() {
                acc += (z - Complex64::ONE).norm_sqr();
                count += 1;
            }
        }
        let var = acc / count as f64;
        let want = 1.0 / 4.0;
        assert!((var / want - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn ls_errors() {
        let g = make_comb_pilots(1, 4, 2, 1, 0).unwrap();
        let y = synthesize_received(&[rand_tensor([1, 1, 4, 1], 0)], &g, noiseless(), &[], 0).unwrap();
        assert!(ls_comb_estimate(&y, &g, 1).is_err());
        let mut bad = g.clone();
        bad.users[0].symbols[0][0] = Complex64::ZERO;
        assert!(matches!(ls_comb_estimate(&y, &bad, 0), Err(Error::Numerical(_))));
        assert!(synthesize_received(&[], &g, noiseless(), &[], 0).is_err());
        assert!(synthesize_received(&[rand_tensor([1, 1, 5, 1], 0)], &g, noiseless(), &[], 0).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let full = rand_tensor([2, 1, 6, 1], 3);
        let comb: Vec<usize> = (1..=6).collect();
        assert_eq!(linear_interpolate(&full, &comb, 6).unwrap(), full);

        let two = ComplexTensor4::from_vec([1, 1, 2, 1], vec![Complex64::ZERO, Complex64::new(2.0, 0.0)]).unwrap();
        let out = linear_interpolate(&two, &[1, 3], 3).unwrap();
        assert_eq!(out.get(0, 0, 1, 0), Complex64::ONE);

        // flat extension at the edges
        let out = linear_interpolate(&two, &[2, 4], 6).unwrap();
        assert_eq!(out.get(0, 0, 0, 0), Complex64::ZERO);
        assert_eq!(out.get(0, 0, 4, 0), Complex64::new(2.0, 0.0));
        assert_eq!(out.get(0, 0, 5, 0), Complex64::new(2.0, 0.0));

        let one = ComplexTensor4::zeros([1, 1, 1, 1]).unwrap();
        assert!(linear_interpolate(&one, &[1], 4).is_err());
    }

    #[test]
    fn linear_beats_nearest_neighbour_on_smooth_channel() {
        let k_total = 48;
        let tau = 0.002;
        let truth = ComplexTensor4::from_fn([1, 1, k_total, 1], |_, _, k, _| {
            Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * tau * k as f64)
        })
        .unwrap();
        let comb: Vec<usize> = (1..=k_total).step_by(4).collect();
        let idx: Vec<usize> = comb.iter().map(|k| k - 1).collect();
        let sampled = truth.select_mode3(&idx).unwrap();
        let lin = linear_interpolate(&sampled, &comb, k_total).unwrap();
        let nn = ComplexTensor4::from_fn([1, 1, k_total, 1], |_, _, k, _| {
            let j = ((k as f64) / 4.0).round() as usize;
            sampled.get(0, 0, j.min(comb.len() - 1), 0)
        })
        .unwrap();
        let e_lin = relative_error(&truth, &lin).unwrap();
        let e_nn = relative_error(&truth, &nn).unwrap();
        // second-order bound on the interior: |h''| s^2 / 8 with |h''| = (2π τ)^2
        let bound = (2.0 * std::f64::consts::PI * tau).powi(2) * 16.0 / 8.0;
        let edge = (2.0 * std::f64::consts::PI * tau * 3.0).powi(2);
        assert!(e_lin < e_nn);
        assert!(e_lin <= bound * bound + edge * 3.0 / k_total as f64);
    }

    #[test]
    fn dump_round_trip() {
        let g = make_comb_pilots(1, 4, 2, 2, 0).unwrap();
        let y = synthesize_received(&[rand_tensor([2, 1, 4, 2], 0)], &g, LinkBudget { snr_db: 10.0, isr_db: f64::NEG_INFINITY }, &[], 3).unwrap();
        let mut buf = Vec::new();
        y.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 40 + 2 * 16 * 16);
        assert_eq!(ReceivedGrid::read_dump(&buf[..]).unwrap(), y.frames);
    }
}
