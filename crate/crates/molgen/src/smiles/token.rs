//! SMILES tokenization: greedy longest-match segmentation.

use super::SmilesError;

/// Coarse classification of a SMILES token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Atom,
    BracketAtom,
    Bond,
    RingDigit,
    BranchOpen,
    BranchClose,
    Special,
}

/// One lexical unit of a SMILES string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
}

impl Token {
    fn new(text: impl Into<String>, kind: TokenKind) -> Self {
        Self { text: text.into(), kind }
    }
}

/// Organic-subset atom symbols that stand alone outside brackets
/// ("Cl" and "Br" are handled by the two-character rule).
const ORGANIC_SINGLE: &[char] = &[
    'B', 'C', 'N', 'O', 'P', 'S', 'F', 'I', 'b', 'c', 'n', 'o', 'p', 's',
];

const BOND_CHARS: &[char] = &['-', '=', '#', ':', '/', '\\'];

/// Split a SMILES string into tokens.
///
/// "Cl" and "Br" are kept whole, a bracket expression `[...]` is one
/// token, everything else is a single character. The concatenation of
/// token texts always equals the input, so any string tokenizes; the only
/// failure is a `[` without a matching `]`.
pub fn tokenize(smiles: &str) -> Result<Vec<Token>, SmilesError> {
    let chars: Vec<char> = smiles.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '[' {
            // Span to the first ']'. An interior '[' means the opener is
            // never closed by a well-formed bracket.
            let mut j = i + 1;
            loop {
                match chars.get(j) {
                    None | Some('[') => return Err(SmilesError::UnterminatedBracket { pos: i }),
                    Some(']') => break,
                    Some(_) => j += 1,
                }
            }
            let text: String = chars[i..=j].iter().collect();
            out.push(Token::new(text, TokenKind::BracketAtom));
            i = j + 1;
            continue;
        }
        if (c == 'C' && chars.get(i + 1) == Some(&'l'))
            || (c == 'B' && chars.get(i + 1) == Some(&'r'))
        {
            let text: String = chars[i..i + 2].iter().collect();
            out.push(Token::new(text, TokenKind::Atom));
            i += 2;
            continue;
        }
        let kind = if ORGANIC_SINGLE.contains(&c) {
            TokenKind::Atom
        } else if BOND_CHARS.contains(&c) {
            TokenKind::Bond
        } else if c.is_ascii_digit() {
            TokenKind::RingDigit
        } else if c == '(' {
            TokenKind::BranchOpen
        } else if c == ')' {
            TokenKind::BranchClose
        } else {
            TokenKind::Special
        };
        out.push(Token::new(c.to_string(), kind));
        i += 1;
    }
    Ok(out)
}

/// Concatenate token texts back into a string.
pub fn detokenize(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        tokenize(s).unwrap().into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn single_char_atoms() {
        assert_eq!(texts("CCO"), ["C", "C", "O"]);
    }

    #[test]
    fn chlorine_is_one_token() {
        let toks = tokenize("CCl").unwrap();
        assert_eq!(toks.len(), 2);
        assert_eq!(toks[1].text, "Cl");
        assert_eq!(toks[1].kind, TokenKind::Atom);
    }

    #[test]
    fn bromine_is_one_token() {
        assert_eq!(texts("CBr"), ["C", "Br"]);
    }

    #[test]
    fn bracket_atom_is_one_token() {
        assert_eq!(texts("c1cc[nH]c1"), ["c", "1", "c", "c", "[nH]", "c", "1"]);
        let toks = tokenize("c1cc[nH]c1").unwrap();
        assert_eq!(toks[4].kind, TokenKind::BracketAtom);
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").unwrap().is_empty());
        assert_eq!(detokenize(&[]), "");
    }

    #[test]
    fn unterminated_bracket() {
        assert!(matches!(
            tokenize("C[nH"),
            Err(SmilesError::UnterminatedBracket { pos: 1 })
        ));
        assert!(matches!(
            tokenize("C[n[H]]"),
            Err(SmilesError::UnterminatedBracket { pos: 1 })
        ));
    }

    #[test]
    fn kinds() {
        let toks = tokenize("C(=O)%12.@*").unwrap();
        let kinds: Vec<TokenKind> = toks.iter().map(|t| t.kind).collect();
        assert_eq!(
            kinds,
            [
                TokenKind::Atom,
                TokenKind::BranchOpen,
                TokenKind::Bond,
                TokenKind::Atom,
                TokenKind::BranchClose,
                TokenKind::Special,
                TokenKind::RingDigit,
                TokenKind::RingDigit,
                TokenKind::Special,
                TokenKind::Special,
                TokenKind::Special,
            ]
        );
    }

    #[test]
    fn roundtrip_examples() {
        for s in ["CCl", "c1cc[nH]c1", "C(=O)OBr", "N#N", "C%12CC%12"] {
            assert_eq!(detokenize(&tokenize(s).unwrap()), s);
        }
    }
}
