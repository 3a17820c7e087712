//! Binary sensing matrices and Walsh-Hadamard kernels.
//!
//! Two matrix families are provided, both with entries in {0, 1} whose
//! signed versions (entry -> 2*entry - 1) are rows of a 1024x1024 Hadamard
//! basis and therefore pairwise orthogonal:
//!
//! * **PWH** - the Sylvester Hadamard matrix with seeded random row and
//!   column permutations, binarized.
//! * **PC** - the full 2D sequency-ordered Walsh basis on a 32x32 grid,
//!   sorted into three dyadic scale bands so low-spatial-frequency patterns
//!   come first; the 64 band-0 rows are constant on every aligned 4x4 block.
//!
//! Rows are bit-packed 64 columns per `u64` word, row-major, least
//! significant bit first: column `j` of a row lives in word `j / 64` at bit
//! `j % 64`.

use std::fs;
use std::ops::{Add, Sub};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fingerprint::fnv1a64;
use crate::rng;
use crate::{IMAGE_PIXELS, IMAGE_SIDE};

/// Words per bit-packed row (n / 64).
fn words_per_row(n: usize) -> usize {
    n / 64
}

/// In-place fast Walsh-Hadamard transform: replaces `data` with `H_n * data`
/// where `H_n` is the Sylvester Hadamard matrix. O(n log n), exact on
/// integer inputs. `H_n^2 = n * I`, so applying it twice scales by `n`.
pub fn fwht<T>(data: &mut [T]) -> Result<()>
where
    T: Copy + Add<Output = T> + Sub<Output = T>,
{
    let n = data.len();
    if !n.is_power_of_two() {
        return Err(Error::invalid(format!(
            "fwht length must be a power of two, got {n}"
        )));
    }
    let mut half = 1;
    while half < n {
        let step = half * 2;
        for block in (0..n).step_by(step) {
            for i in block..block + half {
                let a = data[i];
                let b = data[i + half];
                data[i] = a + b;
                data[i + half] = a - b;
            }
        }
        half = step;
    }
    Ok(())
}

/// Entry of the Sylvester Hadamard matrix in natural order: +1 or -1.
#[inline]
fn hadamard_sign(row: usize, col: usize) -> i8 {
    if (row & col).count_ones() % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Reverse the low `bits` bits of `x`.
#[inline]
fn reverse_bits(x: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        (x.reverse_bits()) >> (usize::BITS - bits)
    }
}

/// Natural Hadamard row index of the sequency-`k` Walsh function on `2^p`
/// points: bit-reverse of the Gray code of `k`.
fn sequency_to_natural(k: usize, p: u32) -> usize {
    reverse_bits(k ^ (k >> 1), p)
}

/// The `k`-th sequency-ordered Walsh function sampled on `2^p` points, as
/// signed entries in {-1, +1}. The result has exactly `k` sign changes
/// between consecutive entries.
pub fn sequency_walsh_row(k: usize, p: u32) -> Result<Vec<i8>> {
    let n = 1usize << p;
    if k >= n {
        return Err(Error::invalid(format!(
            "sequency index {k} out of range for length {n}"
        )));
    }
    let natural = sequency_to_natural(k, p);
    Ok((0..n).map(|j| hadamard_sign(natural, j)).collect())
}

/// Matrix family tag, also the kind byte of the matrix file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatrixKind {
    Pwh,
    Pc,
}

impl MatrixKind {
    pub fn code(self) -> u8 {
        match self {
            MatrixKind::Pwh => 0,
            MatrixKind::Pc => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(MatrixKind::Pwh),
            1 => Ok(MatrixKind::Pc),
            other => Err(Error::invalid(format!("unknown matrix kind byte {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MatrixKind::Pwh => "pwh",
            MatrixKind::Pc => "pc",
        }
    }
}

impl std::str::FromStr for MatrixKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pwh" => Ok(MatrixKind::Pwh),
            "pc" => Ok(MatrixKind::Pc),
            other => Err(Error::invalid(format!(
                "unknown matrix kind '{other}' (expected pwh or pc)"
            ))),
        }
    }
}

/// 2D sequency indices of a Partial-Complete row, with its scale band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequencyPair {
    pub kx: u8,
    pub ky: u8,
}

impl SequencyPair {
    pub fn new(kx: u8, ky: u8) -> Self {
        debug_assert!(kx < IMAGE_SIDE as u8 && ky < IMAGE_SIDE as u8);
        SequencyPair { kx, ky }
    }

    /// Scale band: 0 if max(kx, ky) < 8, 1 if < 16, 2 otherwise.
    pub fn band(self) -> u8 {
        let m = self.kx.max(self.ky);
        if m < 8 {
            0
        } else if m < 16 {
            1
        } else {
            2
        }
    }
}

/// Where a matrix row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOrigin {
    /// PWH: the natural Hadamard row index selected by the row permutation.
    HadamardRow(u16),
    /// PC: the 2D sequency pair of the Walsh product pattern.
    Walsh2d(SequencyPair),
}

/// A fixed binary {0,1} sensing matrix with bit-packed rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingMatrix {
    kind: MatrixKind,
    n: usize,
    num_rows: usize,
    seed: u64,
    /// `num_rows * (n / 64)` words; see module docs for the packing order.
    rows: Vec<u64>,
    /// Per-row provenance. Present on built matrices, empty after a file
    /// load (the file format stores only the bits).
    origins: Vec<RowOrigin>,
}

impl SensingMatrix {
    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn origin(&self, row: usize) -> Option<RowOrigin> {
        self.origins.get(row).copied()
    }

    /// Entry (0 or 1) at `row`, `col`.
    pub fn bit(&self, row: usize, col: usize) -> u8 {
        debug_assert!(row < self.num_rows && col < self.n);
        let w = self.rows[row * words_per_row(self.n) + col / 64];
        ((w >> (col % 64)) & 1) as u8
    }

    /// Bit-packed words of one row.
    pub fn row_words(&self, row: usize) -> &[u64] {
        let wpr = words_per_row(self.n);
        &self.rows[row * wpr..(row + 1) * wpr]
    }

    /// Row `i` reshaped row-major to a 32x32 binary image.
    pub fn pattern(&self, i: usize) -> Result<Vec<u8>> {
        if i >= self.num_rows {
            return Err(Error::invalid(format!(
                "pattern row {i} out of range ({} rows)",
                self.num_rows
            )));
        }
        if self.n != IMAGE_PIXELS {
            return Err(Error::Dimension(format!(
                "pattern requires n = {IMAGE_PIXELS}, matrix has n = {}",
                self.n
            )));
        }
        Ok((0..self.n).map(|j| self.bit(i, j)).collect())
    }

    /// Dot product of the signed versions of two rows: n - 2 * hamming.
    pub fn signed_dot(&self, a: usize, b: usize) -> i64 {
        let wa = self.row_words(a);
        let wb = self.row_words(b);
        let hamming: u32 = wa.iter().zip(wb).map(|(x, y)| (x ^ y).count_ones()).sum();
        self.n as i64 - 2 * hamming as i64
    }

    /// Serialize to the matrix file layout (see [`Self::write_to`]).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(25 + self.rows.len() * 8);
        out.extend_from_slice(MATRIX_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_rows as u32).to_le_bytes());
        for w in &self.rows {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// 64-bit fingerprint of the serialized matrix (equals the fingerprint
    /// of a file written by [`Self::write_to`]).
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }

    /// Write the matrix file: magic "CSMX", u32 LE version, kind byte,
    /// u64 LE seed, u32 LE n, u32 LE num_rows, then bit-packed rows as
    /// u64 LE words in the packing order of the module docs.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Read a matrix file written by [`Self::write_to`].
    pub fn read_from(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { offset, message, .. } => Error::format(path, offset, message),
            other => other,
        })
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let anon = Path::new("<bytes>");
        if bytes.len() < 25 {
            return Err(Error::format(anon, bytes.len() as u64, "truncated header"));
        }
        if &bytes[0..4] != MATRIX_MAGIC {
            return Err(Error::format(anon, 0, "bad magic, expected CSMX"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::format(
                anon,
                4,
                format!("unsupported version {version}"),
            ));
        }
        let kind = MatrixKind::from_code(bytes[8])
            .map_err(|_| Error::format(anon, 8, format!("bad kind byte {}", bytes[8])))?;
        let seed = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let n = u32::from_le_bytes(bytes[17..21].try_into().unwrap()) as usize;
        let num_rows = u32::from_le_bytes(bytes[21..25].try_into().unwrap()) as usize;
        if n == 0 || n % 64 != 0 {
            return Err(Error::format(anon, 17, format!("n = {n} not packable")));
        }
        let expected = 25 + num_rows * words_per_row(n) * 8;
        if bytes.len() != expected {
            return Err(Error::format(
                anon,
                bytes.len() as u64,
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let rows = bytes[25..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(SensingMatrix {
            kind,
            n,
            num_rows,
            seed,
            rows,
            origins: Vec::new(),
        })
    }
}

/// Magic bytes of the matrix file format.
pub const MATRIX_MAGIC: &[u8; 4] = b"CSMX";
/// Shared version number of all binary file formats in this crate.
pub const FORMAT_VERSION: u32 = 1;

fn check_size(n: usize) -> Result<()> {
    if n != IMAGE_PIXELS {
        return Err(Error::invalid(format!(
            "unsupported matrix size n = {n}, only {IMAGE_PIXELS} (32x32 images) is supported"
        )));
    }
    Ok(())
}

/// Build the deterministic Partial-Complete matrix for n = 1024.
///
/// Rows are all 1024 2D Walsh products P[i, j] = w_ky[i] * w_kx[j] on the
/// 32x32 grid, ordered by (band ascending, kx + ky ascending, kx ascending)
/// and binarized by value -> (value + 1) / 2. The 64 band-0 rows (both
/// sequencies below 8) come first.
pub fn build_pc(n: usize) -> Result<SensingMatrix> {
    check_size(n)?;
    let p = IMAGE_SIDE.trailing_zeros();
    let walsh: Vec<Vec<i8>> = (0..IMAGE_SIDE)
        .map(|k| sequency_walsh_row(k, p))
        .collect::<Result<_>>()?;

    let mut pairs: Vec<SequencyPair> = (0..IMAGE_SIDE as u8)
        .flat_map(|ky| (0..IMAGE_SIDE as u8).map(move |kx| SequencyPair::new(kx, ky)))
        .collect();
    pairs.sort_by_key(|pr| (pr.band(), pr.kx as u16 + pr.ky as u16, pr.kx));

    let wpr = words_per_row(n);
    let mut rows = vec![0u64; n * wpr];
    for (r, pr) in pairs.iter().enumerate() {
        let wx = &walsh[pr.kx as usize];
        let wy = &walsh[pr.ky as usize];
        for i in 0..IMAGE_SIDE {
            for j in 0..IMAGE_SIDE {
                if wy[i] * wx[j] > 0 {
                    let col = i * IMAGE_SIDE + j;
                    rows[r * wpr + col / 64] |= 1u64 << (col % 64);
                }
            }
        }
    }

    Ok(SensingMatrix {
        kind: MatrixKind::Pc,
        n,
        num_rows: n,
        seed: 0,
        rows,
        origins: pairs.into_iter().map(RowOrigin::Walsh2d).collect(),
    })
}

/// Build a permuted Walsh-Hadamard matrix from explicit row and column
/// permutations: entry (i, j) = (1 + H[row_perm[i], col_perm[j]]) / 2.
///
/// `build_pwh` draws the permutations from a seeded generator; this
/// function is the deterministic core and doubles as a test hook (identity
/// permutations give the binarized Sylvester matrix).
pub fn build_pwh_from_permutations(
    n: usize,
    row_perm: &[usize],
    col_perm: &[usize],
    seed: u64,
) -> Result<SensingMatrix> {
    check_size(n)?;
    if row_perm.len() != n || col_perm.len() != n {
        return Err(Error::Dimension(format!(
            "permutations must have length {n}, got {} and {}",
            row_perm.len(),
            col_perm.len()
        )));
    }
    let wpr = words_per_row(n);
    let mut rows = vec![0u64; n * wpr];
    for i in 0..n {
        let h_row = row_perm[i];
        for j in 0..n {
            if hadamard_sign(h_row, col_perm[j]) > 0 {
                rows[i * wpr + j / 64] |= 1u64 << (j % 64);
            }
        }
    }
    Ok(SensingMatrix {
        kind: MatrixKind::Pwh,
        n,
        num_rows: n,
        seed,
        rows,
        origins: row_perm
            .iter()
            .map(|&r| RowOrigin::HadamardRow(r as u16))
            .collect(),
    })
}

/// Build the permuted Walsh-Hadamard matrix for n = 1024.
///
/// A uniformly random row permutation and then a column permutation are
/// drawn by Fisher-Yates from a ChaCha8 stream seeded with `seed`; same
/// seed, bit-identical matrix.
pub fn build_pwh(n: usize, seed: u64) -> Result<SensingMatrix> {
    check_size(n)?;
    let mut rng = rng::rng_from_seed(seed);
    let mut row_perm: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng, &mut row_perm);
    let mut col_perm: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng, &mut col_perm);
    build_pwh_from_permutations(n, &row_perm, &col_perm, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_core::RngCore;

    fn naive_hadamard_multiply(v: &[i64]) -> Vec<i64> {
        let n = v.len();
        (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| hadamard_sign(r, c) as i64 * v[c])
                    .sum::<i64>()
            })
            .collect()
    }

    fn sign_changes(row: &[i8]) -> usize {
        row.windows(2).filter(|w| w[0] != w[1]).count()
    }

    #[test]
    fn fwht_delta_gives_all_ones() {
        let mut v = vec![1i64, 0, 0, 0];
        fwht(&mut v).unwrap();
        assert_eq!(v, vec![1, 1, 1, 1]);
    }

    #[test]
    fn fwht_applied_twice_scales_by_n() {
        let mut rng = rng::rng_from_seed(11);
        for p in 0..=10u32 {
            let n = 1usize << p;
            let orig: Vec<i64> = (0..n).map(|_| (rng.next_u64() % 201) as i64 - 100).collect();
            let mut v = orig.clone();
            fwht(&mut v).unwrap();
            fwht(&mut v).unwrap();
            let scaled: Vec<i64> = orig.iter().map(|x| x * n as i64).collect();
            assert_eq!(v, scaled, "p = {p}");
        }
    }

    #[test]
    fn fwht_matches_naive_multiply_up_to_1024() {
        let mut rng = rng::rng_from_seed(22);
        for p in 1..=10u32 {
            let n = 1usize << p;
            let v: Vec<i64> = (0..n).map(|_| (rng.next_u64() % 41) as i64 - 20).collect();
            let mut fast = v.clone();
            fwht(&mut fast).unwrap();
            assert_eq!(fast, naive_hadamard_multiply(&v), "n = {n}");
        }
    }

    #[test]
    fn fwht_rejects_non_power_of_two() {
        let mut v = vec![1.0f64; 3];
        assert!(fwht(&mut v).is_err());
        let mut empty: Vec<f64> = Vec::new();
        assert!(fwht(&mut empty).is_err());
    }

    #[test]
    fn sequency_row_zero_is_constant() {
        let row = sequency_walsh_row(0, 5).unwrap();
        assert!(row.iter().all(|&x| x == 1));
        assert_eq!(sign_changes(&row), 0);
    }

    #[test]
    fn sequency_row_one_is_half_and_half() {
        let row = sequency_walsh_row(1, 5).unwrap();
        assert!(row[..16].iter().all(|&x| x == 1));
        assert!(row[16..].iter().all(|&x| x == -1));
        assert_eq!(sign_changes(&row), 1);
    }

    #[test]
    fn sequency_rows_have_k_sign_changes() {
        for p in 0..=5u32 {
            for k in 0..(1usize << p) {
                let row = sequency_walsh_row(k, p).unwrap();
                assert_eq!(sign_changes(&row), k, "k = {k}, p = {p}");
            }
        }
    }

    #[test]
    fn sequency_row_out_of_range_errors() {
        assert!(sequency_walsh_row(32, 5).is_err());
    }

    #[test]
    fn pc_row_zero_is_all_ones() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        assert!((0..IMAGE_PIXELS).all(|j| pc.bit(0, j) == 1));
        assert_eq!(pc.origin(0), Some(RowOrigin::Walsh2d(SequencyPair::new(0, 0))));
    }

    #[test]
    fn pc_is_deterministic() {
        let a = build_pc(IMAGE_PIXELS).unwrap();
        let b = build_pc(IMAGE_PIXELS).unwrap();
        assert_eq!(a, b);
    }

    fn constant_on_4x4_blocks(pattern: &[u8]) -> bool {
        for bi in 0..8 {
            for bj in 0..8 {
                let first = pattern[bi * 4 * IMAGE_SIDE + bj * 4];
                for di in 0..4 {
                    for dj in 0..4 {
                        if pattern[(bi * 4 + di) * IMAGE_SIDE + bj * 4 + dj] != first {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    #[test]
    fn pc_band0_rows_constant_on_blocks_band2_not() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        for r in 0..64 {
            let pat = pc.pattern(r).unwrap();
            assert!(constant_on_4x4_blocks(&pat), "band-0 row {r}");
            match pc.origin(r) {
                Some(RowOrigin::Walsh2d(pair)) => assert_eq!(pair.band(), 0),
                other => panic!("unexpected origin {other:?}"),
            }
        }
        for r in 0..IMAGE_PIXELS {
            if let Some(RowOrigin::Walsh2d(pair)) = pc.origin(r) {
                if pair.band() == 2 {
                    let pat = pc.pattern(r).unwrap();
                    assert!(!constant_on_4x4_blocks(&pat), "band-2 row {r}");
                }
            }
        }
    }

    #[test]
    fn pc_rows_are_the_2d_walsh_basis_and_orthogonal() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        // Independent route: all 2D products of natural-order Hadamard rows.
        let mut reference: Vec<Vec<u64>> = Vec::with_capacity(IMAGE_PIXELS);
        for a in 0..IMAGE_SIDE {
            for b in 0..IMAGE_SIDE {
                let mut words = vec![0u64; IMAGE_PIXELS / 64];
                for i in 0..IMAGE_SIDE {
                    for j in 0..IMAGE_SIDE {
                        if hadamard_sign(a, i) * hadamard_sign(b, j) > 0 {
                            let col = i * IMAGE_SIDE + j;
                            words[col / 64] |= 1u64 << (col % 64);
                        }
                    }
                }
                reference.push(words);
            }
        }
        let mut actual: Vec<Vec<u64>> = (0..IMAGE_PIXELS)
            .map(|r| pc.row_words(r).to_vec())
            .collect();
        reference.sort_unstable();
        actual.sort_unstable();
        assert_eq!(actual, reference);

        for a in 0..IMAGE_PIXELS {
            assert_eq!(pc.signed_dot(a, a), IMAGE_PIXELS as i64);
            for b in (a + 1)..IMAGE_PIXELS {
                assert_eq!(pc.signed_dot(a, b), 0, "rows {a}, {b}");
            }
        }
    }

    #[test]
    fn pwh_identity_permutations_give_sylvester() {
        let idn: Vec<usize> = (0..IMAGE_PIXELS).collect();
        let m = build_pwh_from_permutations(IMAGE_PIXELS, &idn, &idn, 0).unwrap();
        assert!((0..IMAGE_PIXELS).all(|j| m.bit(0, j) == 1));
        for (r, c) in [(1, 1), (3, 5), (513, 700)] {
            let expected = if hadamard_sign(r, c) > 0 { 1 } else { 0 };
            assert_eq!(m.bit(r, c), expected);
        }
    }

    #[test]
    fn pwh_same_seed_is_bit_identical() {
        let a = build_pwh(IMAGE_PIXELS, 42).unwrap();
        let b = build_pwh(IMAGE_PIXELS, 42).unwrap();
        assert_eq!(a, b);
        let c = build_pwh(IMAGE_PIXELS, 43).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn pwh_random_row_pairs_are_orthogonal() {
        let m = build_pwh(IMAGE_PIXELS, 7).unwrap();
        let mut rng = rng::rng_from_seed(99);
        for _ in 0..100 {
            let a = rng::gen_index(&mut rng, IMAGE_PIXELS);
            let mut b = rng::gen_index(&mut rng, IMAGE_PIXELS);
            if a == b {
                b = (b + 1) % IMAGE_PIXELS;
            }
            assert_eq!(m.signed_dot(a, b), 0, "rows {a}, {b}");
            assert_eq!(m.signed_dot(a, a), IMAGE_PIXELS as i64);
        }
    }

    #[test]
    fn pattern_reshapes_row_major() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        let pat = pc.pattern(0).unwrap();
        assert!(pat.iter().all(|&v| v == 1));

        // Find the (kx=1, ky=0) row: left half columns 1, right half 0.
        let row = (0..IMAGE_PIXELS)
            .find(|&r| pc.origin(r) == Some(RowOrigin::Walsh2d(SequencyPair::new(1, 0))))
            .unwrap();
        let pat = pc.pattern(row).unwrap();
        for i in 0..IMAGE_SIDE {
            for j in 0..IMAGE_SIDE {
                let expected = if j < 16 { 1 } else { 0 };
                assert_eq!(pat[i * IMAGE_SIDE + j], expected, "({i}, {j})");
            }
        }

        // Round trip: flatten of the reshape is the original row bits.
        let r = 123;
        let pat = pc.pattern(r).unwrap();
        for (j, &v) in pat.iter().enumerate() {
            assert_eq!(v, pc.bit(r, j));
        }
    }

    #[test]
    fn pattern_index_out_of_range() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        assert!(pc.pattern(IMAGE_PIXELS).is_err());
    }

    #[test]
    fn unsupported_size_rejected() {
        assert!(build_pc(512).is_err());
        assert!(build_pwh(512, 0).is_err());
    }

    #[test]
    fn matrix_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("csmx_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csmx");

        let m = build_pwh(IMAGE_PIXELS, 5).unwrap();
        m.write_to(&path).unwrap();
        let loaded = SensingMatrix::read_from(&path).unwrap();
        assert_eq!(loaded.kind(), MatrixKind::Pwh);
        assert_eq!(loaded.seed(), 5);
        assert_eq!(loaded.rows, m.rows);
        assert_eq!(
            m.fingerprint(),
            crate::fingerprint::file_fingerprint(&path).unwrap()
        );

        // Corrupt the magic.
        let mut bytes = m.to_bytes();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(SensingMatrix::read_from(&path).is_err());

        std::fs::remove_dir_all(&dir).unwrap();
    }
}
