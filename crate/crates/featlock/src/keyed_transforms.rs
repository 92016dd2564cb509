//! Key-derived permutations and the transforms built on them.
//!
//! A [`SecretKey`] is expanded into a pseudorandom byte stream with SHA-256 in
//! counter mode and consumed by a Fisher-Yates shuffle. Each stream block is
//!
//! ```text
//! SHA256("featlock/perm/v1" || site: u32 LE || c: u64 LE || counter: u64 LE || key bytes)
//! ```
//!
//! and yields four little-endian `u64` words. For `i` from `c-1` down to `1`
//! a word `r` is drawn (rejected while `r >= u64::MAX - u64::MAX % (i+1)`)
//! and positions `i` and `r % (i+1)` of `[1, .., c]` are swapped.
//! Site `0` is the site-less stream used by [`derive_permutation`]; feature-map
//! sites are numbered from 1.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Image, Tensor3};

const STREAM_DOMAIN: &[u8] = b"featlock/perm/v1";

/// Opaque secret from which every permutation is derived.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    bytes: Vec<u8>,
}

impl SecretKey {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(Error::config("secret key must not be empty"));
        }
        Ok(Self { bytes })
    }

    /// Draws `len` bytes from `rng`.
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> Result<Self> {
        let mut bytes = vec![0u8; len];
        rng.fill_bytes(&mut bytes);
        Self::new(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Hex SHA-256 of the key bytes. Safe to store alongside artifacts.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::new(bytes)
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, &self.bytes).map_err(|e| Error::io(path, e))
    }
}

// Never print key material.
impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({}…)", &self.fingerprint()[..12])
    }
}

/// A bijection on channel indices. Stored zero-based; [`Self::to_one_based`]
/// gives the `[α₁..α_c]` form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PermutationVector {
    alpha: Vec<usize>,
}

impl PermutationVector {
    pub fn identity(c: usize) -> Result<Self> {
        if c == 0 {
            return Err(Error::dim("permutation size must be at least 1"));
        }
        Ok(Self {
            alpha: (0..c).collect(),
        })
    }

    pub fn from_zero_based(alpha: Vec<usize>) -> Result<Self> {
        let c = alpha.len();
        if c == 0 {
            return Err(Error::dim("permutation size must be at least 1"));
        }
        let mut seen = vec![false; c];
        for &a in &alpha {
            if a >= c || seen[a] {
                return Err(Error::dim(format!(
                    "not a permutation of 0..{c}: entry {a} out of range or repeated"
                )));
            }
            seen[a] = true;
        }
        Ok(Self { alpha })
    }

    pub fn from_one_based(alpha: &[usize]) -> Result<Self> {
        let zero = alpha
            .iter()
            .map(|&a| {
                a.checked_sub(1)
                    .ok_or_else(|| Error::dim("one-based permutation contains 0"))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_zero_based(zero)
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn as_zero_based(&self) -> &[usize] {
        &self.alpha
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.alpha.iter().map(|a| a + 1).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.alpha.iter().enumerate().all(|(i, &a)| i == a)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.alpha.len()];
        for (i, &a) in self.alpha.iter().enumerate() {
            inv[a] = i;
        }
        Self { alpha: inv }
    }

    /// Permutation equivalent to applying `self` and then `then`.
    pub fn then(&self, then: &Self) -> Result<Self> {
        if self.len() != then.len() {
            return Err(Error::dim("cannot compose permutations of different sizes"));
        }
        Ok(Self {
            alpha: then.alpha.iter().map(|&q| self.alpha[q]).collect(),
        })
    }

    /// Reorders `src` into `dst` so that `dst[i] = src[α_i]`.
    pub(crate) fn gather_into<T: Copy>(&self, src: &[T], dst: &mut [T]) {
        for (d, &a) in dst.iter_mut().zip(&self.alpha) {
            *d = src[a];
        }
    }
}

/// Counter-mode SHA-256 word stream over (site, c, key).
struct KeyStream<'a> {
    key: &'a SecretKey,
    site: u32,
    c: u64,
    counter: u64,
    words: [u64; 4],
    next: usize,
}

impl<'a> KeyStream<'a> {
    fn new(key: &'a SecretKey, site: u32, c: usize) -> Self {
        Self {
            key,
            site,
            c: c as u64,
            counter: 0,
            words: [0; 4],
            next: 4,
        }
    }

    fn refill(&mut self) {
        let mut h = Sha256::new();
        h.update(STREAM_DOMAIN);
        h.update(self.site.to_le_bytes());
        h.update(self.c.to_le_bytes());
        h.update(self.counter.to_le_bytes());
        h.update(&self.key.bytes);
        let block = h.finalize();
        for (i, w) in self.words.iter_mut().enumerate() {
            *w = u64::from_le_bytes(block[i * 8..i * 8 + 8].try_into().unwrap());
        }
        self.counter += 1;
        self.next = 0;
    }

    fn next_u64(&mut self) -> u64 {
        if self.next == 4 {
            self.refill();
        }
        let w = self.words[self.next];
        self.next += 1;
        w
    }

    /// Unbiased draw from `0..n` by rejection.
    fn below(&mut self, n: u64) -> u64 {
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let r = self.next_u64();
            if r < limit {
                return r % n;
            }
        }
    }
}

fn keyed_shuffle(key: &SecretKey, site: u32, c: usize) -> Result<PermutationVector> {
    if c == 0 {
        return Err(Error::dim("channel count must be at least 1"));
    }
    let mut stream = KeyStream::new(key, site, c);
    let mut alpha: Vec<usize> = (0..c).collect();
    for i in (1..c).rev() {
        let j = stream.below(i as u64 + 1) as usize;
        alpha.swap(i, j);
    }
    Ok(PermutationVector { alpha })
}

/// Derives the permutation of `c` elements determined by `key`.
pub fn derive_permutation(key: &SecretKey, c: usize) -> Result<PermutationVector> {
    keyed_shuffle(key, 0, c)
}

/// Derives the permutation for feature-map `site` (1-based). Different sites
/// of one model get independent permutations from the same key.
pub fn derive_site_permutation(
    key: &SecretKey,
    site: usize,
    c: usize,
) -> Result<PermutationVector> {
    if site == 0 {
        return Err(Error::dim("feature-map sites are numbered from 1"));
    }
    let site = u32::try_from(site).map_err(|_| Error::dim("site index too large"))?;
    keyed_shuffle(key, site, c)
}

/// Returns `x'` with `x'(i, j, k) = x(α_i, j, k)`.
pub fn apply_permutation(x: &FeatureMap, p: &PermutationVector) -> Result<FeatureMap> {
    let (c, h, w) = x.shape();
    if p.len() != c {
        return Err(Error::dim(format!(
            "permutation over {} channels applied to a feature map with {c}",
            p.len()
        )));
    }
    let mut out = vec![0.0f32; x.as_slice().len()];
    permute_planes(x.as_slice(), &mut out, p, h * w);
    Ok(Tensor3::from_raw(c, h, w, out))
}

/// Channel-plane gather on raw buffers: `dst[i] = src[α_i]` plane-wise.
pub(crate) fn permute_planes(src: &[f32], dst: &mut [f32], p: &PermutationVector, plane: usize) {
    for (i, &a) in p.alpha.iter().enumerate() {
        dst[i * plane..(i + 1) * plane].copy_from_slice(&src[a * plane..(a + 1) * plane]);
    }
}

pub fn invert_permutation(p: &PermutationVector) -> PermutationVector {
    p.inverse()
}

/// Block-wise pixel shuffling of (C, H, W) images.
///
/// Each non-overlapping `M×M` block is flattened with index
/// `((ch·M) + row)·M + col` and gathered through one permutation of
/// `M·M·C` elements shared by every block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockShuffle {
    block: usize,
    channels: usize,
    perm: PermutationVector,
}

impl BlockShuffle {
    pub fn from_key(key: &SecretKey, block: usize, channels: usize) -> Result<Self> {
        if block == 0 || channels == 0 {
            return Err(Error::dim("block size and channel count must be positive"));
        }
        let perm = derive_permutation(key, block * block * channels)?;
        Ok(Self {
            block,
            channels,
            perm,
        })
    }

    pub fn with_permutation(block: usize, channels: usize, perm: PermutationVector) -> Result<Self> {
        if block == 0 || channels == 0 || perm.len() != block * block * channels {
            return Err(Error::dim(format!(
                "block permutation must have M·M·C = {} elements, got {}",
                block * block * channels,
                perm.len()
            )));
        }
        Ok(Self {
            block,
            channels,
            perm,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn permutation(&self) -> &PermutationVector {
        &self.perm
    }

    pub fn check_image_dims(&self, c: usize, h: usize, w: usize) -> Result<()> {
        let m = self.block;
        if c != self.channels {
            return Err(Error::dim(format!(
                "block shuffle built for {} channels, image has {c}",
                self.channels
            )));
        }
        if h % m != 0 || w % m != 0 {
            return Err(Error::dim(format!(
                "image {h}×{w} is not divisible into {m}×{m} blocks"
            )));
        }
        Ok(())
    }

    pub fn encrypt(&self, img: &Image) -> Result<Image> {
        self.run(img, &self.perm)
    }

    pub fn decrypt(&self, img: &Image) -> Result<Image> {
        self.run(img, &self.perm.inverse())
    }

    fn run(&self, img: &Image, perm: &PermutationVector) -> Result<Image> {
        let (c, h, w) = img.shape();
        self.check_image_dims(c, h, w)?;
        let m = self.block;
        let n = m * m * c;
        let src = img.as_slice();
        let mut out = vec![0.0f32; src.len()];
        let mut flat = vec![0.0f32; n];
        let mut shuffled = vec![0.0f32; n];
        for by in (0..h).step_by(m) {
            for bx in (0..w).step_by(m) {
                for ch in 0..c {
                    for row in 0..m {
                        let s = (ch * h + by + row) * w + bx;
                        let d = (ch * m + row) * m;
                        flat[d..d + m].copy_from_slice(&src[s..s + m]);
                    }
                }
                perm.gather_into(&flat, &mut shuffled);
                for ch in 0..c {
                    for row in 0..m {
                        let d = (ch * h + by + row) * w + bx;
                        let s = (ch * m + row) * m;
                        out[d..d + m].copy_from_slice(&shuffled[s..s + m]);
                    }
                }
            }
        }
        Ok(Tensor3::from_raw(c, h, w, out))
    }
}

/// Pixel-shuffles `img` with `M×M` blocks under `key`.
pub fn encrypt_image(img: &Image, key: &SecretKey, block: usize) -> Result<Image> {
    BlockShuffle::from_key(key, block, img.channels())?.encrypt(img)
}

pub fn decrypt_image(img: &Image, key: &SecretKey, block: usize) -> Result<Image> {
    BlockShuffle::from_key(key, block, img.channels())?.decrypt(img)
}

/// Writes permutations as golden-vector lines `c alpha_1 ... alpha_c`.
pub fn write_golden<W: Write>(out: &mut W, perms: &[PermutationVector]) -> std::io::Result<()> {
    for p in perms {
        write!(out, "{}", p.len())?;
        for a in p.to_one_based() {
            write!(out, " {a}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parses golden-vector text; blank lines and `#` comments are skipped.
pub fn parse_golden(text: &str) -> Result<Vec<PermutationVector>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::dim(format!("golden line {}: {e}", lineno + 1)))?;
        let (&c, alpha) = nums
            .split_first()
            .ok_or_else(|| Error::dim(format!("golden line {} is empty", lineno + 1)))?;
        if alpha.len() != c {
            return Err(Error::dim(format!(
                "golden line {}: declared c={c} but {} entries",
                lineno + 1,
                alpha.len()
            )));
        }
        out.push(PermutationVector::from_one_based(alpha)?);
    }
    Ok(out)
}
