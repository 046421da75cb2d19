//! Category codes and the mutable table driving tokenization.

use std::collections::HashMap;

/// TeX category code, values 0..=15.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Catcode {
    Escape = 0,
    BeginGroup = 1,
    EndGroup = 2,
    MathShift = 3,
    Alignment = 4,
    EndOfLine = 5,
    Parameter = 6,
    Superscript = 7,
    Subscript = 8,
    Ignored = 9,
    Space = 10,
    Letter = 11,
    Other = 12,
    Active = 13,
    Comment = 14,
    Invalid = 15,
}

impl Catcode {
    pub fn from_u8(v: u8) -> Option<Catcode> {
        use Catcode::*;
        Some(match v {
            0 => Escape,
            1 => BeginGroup,
            2 => EndGroup,
            3 => MathShift,
            4 => Alignment,
            5 => EndOfLine,
            6 => Parameter,
            7 => Superscript,
            8 => Subscript,
            9 => Ignored,
            10 => Space,
            11 => Letter,
            12 => Other,
            13 => Active,
            14 => Comment,
            15 => Invalid,
            _ => return None,
        })
    }
}

/// Character → category mapping. ASCII is a dense array; everything
/// beyond it defaults to `Other` unless explicitly overridden, which
/// keeps UTF-8 prose flowing through as ordinary characters.
#[derive(Debug, Clone)]
pub struct CatcodeTable {
    ascii: [Catcode; 128],
    overrides: HashMap<char, Catcode>,
}

impl CatcodeTable {
    /// The standard initial assignments: backslash escape, braces for
    /// grouping, `$` math shift, `%` comment, letters, and so on.
    pub fn default_catcodes() -> Self {
        let mut ascii = [Catcode::Other; 128];
        ascii[b'\\' as usize] = Catcode::Escape;
        ascii[b'{' as usize] = Catcode::BeginGroup;
        ascii[b'}' as usize] = Catcode::EndGroup;
        ascii[b'$' as usize] = Catcode::MathShift;
        ascii[b'&' as usize] = Catcode::Alignment;
        ascii[b'\r' as usize] = Catcode::EndOfLine;
        ascii[b'\n' as usize] = Catcode::EndOfLine;
        ascii[b'#' as usize] = Catcode::Parameter;
        ascii[b'^' as usize] = Catcode::Superscript;
        ascii[b'_' as usize] = Catcode::Subscript;
        ascii[0] = Catcode::Ignored;
        ascii[b' ' as usize] = Catcode::Space;
        ascii[b'\t' as usize] = Catcode::Space;
        for c in b'a'..=b'z' {
            ascii[c as usize] = Catcode::Letter;
        }
        for c in b'A'..=b'Z' {
            ascii[c as usize] = Catcode::Letter;
        }
        ascii[b'~' as usize] = Catcode::Active;
        ascii[b'%' as usize] = Catcode::Comment;
        ascii[0x7f] = Catcode::Invalid;
        CatcodeTable {
            ascii,
            overrides: HashMap::new(),
        }
    }

    pub fn get(&self, c: char) -> Catcode {
        if (c as u32) < 128 {
            self.ascii[c as usize]
        } else {
            *self.overrides.get(&c).unwrap_or(&Catcode::Other)
        }
    }

    pub fn set(&mut self, c: char, cat: Catcode) {
        if (c as u32) < 128 {
            self.ascii[c as usize] = cat;
        } else {
            self.overrides.insert(c, cat);
        }
    }
}

impl Default for CatcodeTable {
    fn default() -> Self {
        Self::default_catcodes()
    }
}
