//! Stroke stencils for the synthetic alphabet.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STENCIL_ROWS: usize = 7;
pub const STENCIL_COLS: usize = 5;

/// Characters available for vocabularies, in class order.
const ALPHABET: &str = "0123456789AHBCDEFGIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~£§";

/// The first twelve glyphs, drawn by hand.
const FIXED: [[&str; 7]; 12] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
    [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
];

/// Minimum pairwise Hamming distance between stencils.
pub const MIN_HAMMING: usize = 4;

type Stencil = [bool; STENCIL_ROWS * STENCIL_COLS];

/// Ordered glyph classes. Class `c` (1-based) is `chars[c - 1]`; class 0 is
/// the CTC blank.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSet {
    chars: Vec<char>,
    stencils: Vec<Stencil>,
}

fn parse(rows: &[&str; 7]) -> Stencil {
    let mut s = [false; STENCIL_ROWS * STENCIL_COLS];
    for (r, row) in rows.iter().enumerate() {
        for (c, ch) in row.chars().enumerate() {
            s[r * STENCIL_COLS + c] = ch == '#';
        }
    }
    s
}

pub fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

impl GlyphSet {
    /// Maximum supported vocabulary.
    pub const MAX: usize = 96;

    /// The default 12-glyph toy alphabet.
    pub fn toy() -> Self {
        Self::with_size(12).expect("12 glyphs are always available")
    }

    /// `size` glyphs. Beyond the twelve drawn ones, stencils come from a fixed
    /// seeded search that keeps every pair at least [`MIN_HAMMING`] apart.
    pub fn with_size(size: usize) -> Result<Self> {
        if size == 0 || size > Self::MAX {
            return Err(Error::Config(format!("vocabulary size must lie in 1..={}, got {size}", Self::MAX)));
        }
        let chars: Vec<char> = ALPHABET.chars().take(size).collect();
        let mut stencils: Vec<Stencil> = FIXED.iter().take(size).map(parse).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_617f);
        while stencils.len() < size {
            let mut s = [false; STENCIL_ROWS * STENCIL_COLS];
            s.iter_mut().for_each(|b| *b = rng.gen_bool(0.45));
            if stencils.iter().all(|o| hamming(o, &s) >= MIN_HAMMING) {
                stencils.push(s);
            }
        }
        Ok(Self { chars, stencils })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Class index (1-based) of `c`.
    pub fn class_of(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c).map(|i| i + 1)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| self.class_of(c).ok_or_else(|| Error::Domain(format!("character {c:?} is not in the vocabulary"))))
            .collect()
    }

    /// Inverse of [`encode`](Self::encode); unknown classes are skipped.
    pub fn decode(&self, classes: &[usize]) -> String {
        classes.iter().filter_map(|&c| c.checked_sub(1).and_then(|i| self.chars.get(i))).collect()
    }

    /// Stencil cell `(row, col)` of class `class` (1-based).
    pub fn ink(&self, class: usize, row: usize, col: usize) -> bool {
        self.stencils[class - 1][row * STENCIL_COLS + col]
    }

    pub fn stencil(&self, class: usize) -> &[bool] {
        &self.stencils[class - 1]
    }
}
