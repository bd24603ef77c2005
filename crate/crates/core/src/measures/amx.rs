//! bf16 tile-matrix Gram products for neighbor screening.
//!
//! Every feature is split as `x = hi + r` with `hi` in bf16 and an exact
//! `f32` remainder `r`. The kernel accumulates `hi.hi` in `f32`; the omitted
//! terms and the accumulation rounding are bounded per row with
//! Cauchy-Schwarz, so screening stays provably safe.

use std::arch::asm;
use std::sync::OnceLock;

/// Rows and columns are padded to this multiple; it is the micro-kernel edge.
pub(crate) const TILE_EDGE: usize = 32;
const K_CHUNK: usize = 32;
/// k chunks per pass over a block, sized so a row slice stays in L1.
const SLICE: usize = 16;

/// Whether the CPU exposes bf16 tile instructions and the OS granted them.
pub(crate) fn available() -> bool {
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| {
        // SAFETY: cpuid leaf 7 is present on every x86_64 CPU this can run on.
        let leaf7 = std::arch::x86_64::__cpuid_count(7, 0);
        let tile = leaf7.edx & (1 << 24) != 0;
        let bf16 = leaf7.edx & (1 << 22) != 0;
        tile && bf16 && request_tile_permission()
    })
}

fn request_tile_permission() -> bool {
    const SYS_ARCH_PRCTL: i64 = 158;
    const ARCH_REQ_XCOMP_PERM: i64 = 0x1023;
    const XFEATURE_XTILEDATA: i64 = 18;
    let ret: i64;
    // SAFETY: arch_prctl only updates this process's permitted xsave features.
    unsafe {
        asm!(
            "syscall",
            inlateout("rax") SYS_ARCH_PRCTL => ret,
            in("rdi") ARCH_REQ_XCOMP_PERM,
            in("rsi") XFEATURE_XTILEDATA,
            lateout("rcx") _,
            lateout("r11") _,
            options(nostack),
        );
    }
    ret == 0
}

#[inline(always)]
fn to_bf16(x: f32) -> u16 {
    let bits = x.to_bits();
    let rounded = bits.wrapping_add(0x7fff + ((bits >> 16) & 1));
    // Subnormals would be read as zero by the hardware; keep them in the remainder instead.
    if x.abs() < f32::MIN_POSITIVE { 0 } else { (rounded >> 16) as u16 }
}

#[inline(always)]
fn from_bf16(h: u16) -> f32 {
    f32::from_bits(u32::from(h) << 16)
}

/// Largest magnitude handled; beyond it bf16 rounding could overflow.
pub(crate) const MAX_ABS: f32 = 1e30;

/// One 64-byte tile row.
#[derive(Clone, Copy)]
#[repr(C, align(64))]
struct TileLine([u16; 32]);

/// bf16 operands for all rows of a (centered) feature matrix, as 1 KiB tiles
/// covering 16 rows and one k chunk each.
pub(crate) struct Panels {
    chunks: usize,
    /// Row-major tiles for the left operand.
    a: Vec<TileLine>,
    /// Pair-interleaved tiles for the right operand.
    b: Vec<TileLine>,
    /// Per-row bound on `|x_i . x_j - computed|` over all `j`.
    dot_error: Vec<f64>,
}

impl Panels {
    /// Packs `features - mean` row by row and returns the panels with the
    /// squared norm of every centered row.
    pub(crate) fn new(features: &[f32], mean: &[f32]) -> (Self, Vec<f32>) {
        let d = mean.len();
        let n = features.len() / d;
        let n_pad = n.div_ceil(TILE_EDGE) * TILE_EDGE;
        let d_pad = d.div_ceil(K_CHUNK) * K_CHUNK;
        let chunks = d_pad / K_CHUNK;
        let mut a = vec![TileLine([0; 32]); n_pad * chunks];
        let mut b = vec![TileLine([0; 32]); n_pad * chunks];
        let mut hi = vec![0u16; d_pad];
        let mut sq_norms = Vec::with_capacity(n);
        let mut parts = Vec::with_capacity(n);
        for (i, row) in features.chunks_exact(d).enumerate() {
            let [x2, h2, r2] = split_row(row, mean, &mut hi[..d]);
            sq_norms.push(x2 as f32);
            let grow = 1.0 + 1e-9;
            parts.push((h2.sqrt() * grow, r2.sqrt() * grow));
            let (g, t) = (i / 16, i % 16);
            for (q, part) in hi.chunks_exact(K_CHUNK).enumerate() {
                let tile = (g * chunks + q) * 16;
                a[tile + t].0.copy_from_slice(part);
                for (p, pair) in part.chunks_exact(2).enumerate() {
                    b[tile + p].0[2 * t..2 * t + 2].copy_from_slice(pair);
                }
            }
        }

        let h = parts.iter().map(|p| p.0).fold(0.0, f64::max);
        let r = parts.iter().map(|p| p.1).fold(0.0, f64::max);
        let gamma = 1.01 * (d_pad + 2) as f64 * f64::from(f32::EPSILON) / 2.0;
        let dot_error = parts
            .iter()
            .map(|&(hn, rn)| hn * r + rn * h + rn * r + gamma * hn * h + 1e-30)
            .collect();
        (Self { chunks, a, b, dot_error }, sq_norms)
    }

    pub(crate) fn dot_error(&self, i: usize) -> f64 {
        self.dot_error[i]
    }

    /// Writes `x_i . x_j` for rows `r0..r1` and columns `c0..c1` (both padded
    /// up to [`TILE_EDGE`]) into `out`, row stride `ld`. `r0` and `c0` must be
    /// multiples of [`TILE_EDGE`].
    pub(crate) fn gram(&self, r0: usize, r1: usize, c0: usize, c1: usize, out: &mut [f32], ld: usize) {
        assert!(r0.is_multiple_of(TILE_EDGE) && c0.is_multiple_of(TILE_EDGE));
        let r1 = r1.div_ceil(TILE_EDGE) * TILE_EDGE;
        let c1 = c1.div_ceil(TILE_EDGE) * TILE_EDGE;
        assert!(c1 - c0 <= ld && out.len() >= (r1 - r0 - 1) * ld + (c1 - c0));
        assert!(self.a.len() >= r1 * self.chunks && self.b.len() >= c1 * self.chunks);
        let cfg = TileConfig::new();
        // SAFETY: `available()` was checked by the caller; the tile shapes in
        // `cfg` match every load and store below, and the bounds asserted above
        // keep all accesses inside the panels and `out`.
        unsafe {
            asm!("ldtilecfg [{}]", in(reg) cfg.0.as_ptr(), options(nostack, readonly));
            for q0 in (0..self.chunks).step_by(SLICE) {
                let q1 = (q0 + SLICE).min(self.chunks);
                for r in (r0..r1).step_by(TILE_EDGE) {
                    for c in (c0..c1).step_by(TILE_EDGE) {
                        let dst = out.as_mut_ptr().add((r - r0) * ld + (c - c0));
                        self.kernel(r, c, q0, q1, dst, ld);
                    }
                }
            }
            asm!("tilerelease", options(nostack, nomem));
        }
    }

    /// Accumulates k chunks `q0..q1` of a 32 x 32 block into `dst`, starting
    /// from zero when `q0 == 0`. Accumulators live in tiles 0..3, operands in 4..7.
    unsafe fn kernel(&self, r: usize, c: usize, q0: usize, q1: usize, dst: *mut f32, ld: usize) {
        const TILE: usize = 512;
        let stride = 64usize;
        let group = self.chunks * TILE;
        let a0 = self.a.as_ptr().cast::<u16>().add(r / 16 * group);
        let a1 = a0.add(group);
        let b0 = self.b.as_ptr().cast::<u16>().add(c / 16 * group);
        let b1 = b0.add(group);
        let sc = ld * 4;
        if q0 == 0 {
            asm!("tilezero tmm0", "tilezero tmm1", "tilezero tmm2", "tilezero tmm3", options(nostack, nomem));
        } else {
            asm!(
                "tileloadd tmm0, [{d00} + {sc}*1]",
                "tileloadd tmm1, [{d01} + {sc}*1]",
                "tileloadd tmm2, [{d10} + {sc}*1]",
                "tileloadd tmm3, [{d11} + {sc}*1]",
                d00 = in(reg) dst,
                d01 = in(reg) dst.add(16),
                d10 = in(reg) dst.add(16 * ld),
                d11 = in(reg) dst.add(16 * ld + 16),
                sc = in(reg) sc,
                options(nostack, readonly),
            );
        }
        for q in q0..q1 {
            let k = q * TILE;
            asm!(
                "tileloadd tmm4, [{a0} + {s}*1]",
                "tileloadd tmm6, [{b0} + {s}*1]",
                "tdpbf16ps tmm0, tmm4, tmm6",
                "tileloadd tmm7, [{b1} + {s}*1]",
                "tdpbf16ps tmm1, tmm4, tmm7",
                "tileloadd tmm5, [{a1} + {s}*1]",
                "tdpbf16ps tmm2, tmm5, tmm6",
                "tdpbf16ps tmm3, tmm5, tmm7",
                a0 = in(reg) a0.add(k),
                a1 = in(reg) a1.add(k),
                b0 = in(reg) b0.add(k),
                b1 = in(reg) b1.add(k),
                s = in(reg) stride,
                options(nostack, readonly),
            );
        }
        asm!(
            "tilestored [{d00} + {sc}*1], tmm0",
            "tilestored [{d01} + {sc}*1], tmm1",
            "tilestored [{d10} + {sc}*1], tmm2",
            "tilestored [{d11} + {sc}*1], tmm3",
            d00 = in(reg) dst,
            d01 = in(reg) dst.add(16),
            d10 = in(reg) dst.add(16 * ld),
            d11 = in(reg) dst.add(16 * ld + 16),
            sc = in(reg) sc,
            options(nostack),
        );
    }
}

/// Centers one row into bf16 `hi` and returns the squared norms of the
/// centered row, its bf16 part and its remainder.
fn split_row(row: &[f32], mean: &[f32], hi: &mut [u16]) -> [f64; 3] {
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { split_row_avx512(row, mean, hi) };
    }
    split_row_lanes(row, mean, hi)
}

#[target_feature(enable = "avx512f")]
fn split_row_avx512(row: &[f32], mean: &[f32], hi: &mut [u16]) -> [f64; 3] {
    split_row_lanes(row, mean, hi)
}

#[inline(always)]
fn split_row_lanes(row: &[f32], mean: &[f32], hi: &mut [u16]) -> [f64; 3] {
    const LANES: usize = 16;
    let mut acc = [[0f64; LANES]; 3];
    let mut step = |l: usize, v: f32, m: f32, h: &mut u16| {
        let x = v - m;
        *h = to_bf16(x);
        let r = x - from_bf16(*h);
        acc[0][l] += f64::from(x) * f64::from(x);
        acc[1][l] += f64::from(from_bf16(*h)).powi(2);
        acc[2][l] += f64::from(r) * f64::from(r);
    };
    let whole = row.len() / LANES * LANES;
    for ((v, m), h) in row[..whole]
        .chunks_exact(LANES)
        .zip(mean[..whole].chunks_exact(LANES))
        .zip(hi[..whole].chunks_exact_mut(LANES))
    {
        for l in 0..LANES {
            step(l, v[l], m[l], &mut h[l]);
        }
    }
    for (l, ((&v, &m), h)) in row[whole..].iter().zip(&mean[whole..]).zip(&mut hi[whole..]).enumerate() {
        step(l, v, m, h);
    }
    acc.map(|a| a.iter().sum())
}

#[repr(C, align(64))]
struct TileConfig([u8; 64]);

impl TileConfig {
    /// Palette 1, eight tiles of 16 rows x 64 bytes.
    fn new() -> Self {
        let mut cfg = [0u8; 64];
        cfg[0] = 1;
        for t in 0..8 {
            cfg[16 + 2 * t] = 64;
            cfg[48 + t] = 16;
        }
        Self(cfg)
    }
}
