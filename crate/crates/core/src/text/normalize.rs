pub const URL_TOKEN: &str = "<URL>";
pub const NUM_TOKEN: &str = "<NUM>";

const ONES: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen",
];
const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];
const SCALES: [(u64, &str); 4] = [
    (1_000_000_000_000, "trillion"),
    (1_000_000_000, "billion"),
    (1_000_000, "million"),
    (1_000, "thousand"),
];

fn below_thousand(n: u64, out: &mut Vec<String>) {
    debug_assert!(n < 1000);
    let hundreds = n / 100;
    let rest = n % 100;
    if hundreds > 0 {
        out.push(ONES[hundreds as usize].to_string());
        out.push("hundred".to_string());
    }
    if rest >= 20 {
        out.push(TENS[(rest / 10) as usize].to_string());
        if rest % 10 > 0 {
            out.push(ONES[(rest % 10) as usize].to_string());
        }
    } else if rest > 0 || hundreds == 0 {
        out.push(ONES[rest as usize].to_string());
    }
}

/// English words for a nonnegative integer, one word per token.
pub fn number_words(mut n: u64) -> Vec<String> {
    let mut out = Vec::new();
    if n < 1000 {
        below_thousand(n, &mut out);
        return out;
    }
    for (scale, name) in SCALES {
        if n >= scale {
            below_thousand(n / scale, &mut out);
            out.push(name.to_string());
            n %= scale;
        }
    }
    if n > 0 {
        below_thousand(n, &mut out);
    }
    out
}

fn is_url(chunk: &str) -> bool {
    let lower = chunk.to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

fn push_number(literal: &str, out: &mut Vec<String>) {
    let digits: String = literal.chars().filter(|c| *c != ',').collect();
    if digits.contains('.') {
        out.push(NUM_TOKEN.to_string());
        return;
    }
    // values above the trillion scale (or with absurd length) stay opaque
    match digits.parse::<u64>() {
        Ok(n) if n < 1_000_000_000_000_000 => out.extend(number_words(n)),
        _ => out.push(NUM_TOKEN.to_string()),
    }
}

/// Lowercases and tokenizes text.
///
/// Whitespace-separated chunks that look like URLs become [`URL_TOKEN`].
/// Everything else is split into alphanumeric runs; apostrophes inside a
/// word are dropped ("don't" → "dont"). A run made only of digits (with
/// optional thousands separators) is spelled out word by word, decimals
/// become [`NUM_TOKEN`].
pub fn normalize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if is_url(chunk) {
            out.push(URL_TOKEN.to_string());
            continue;
        }
        let chars: Vec<char> = chunk.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_ascii_digit() {
                let start = i;
                let mut j = i;
                while j < chars.len() {
                    let d = chars[j];
                    let joins_digits = (d == ',' || d == '.')
                        && j + 1 < chars.len()
                        && chars[j + 1].is_ascii_digit()
                        && j > start;
                    if d.is_ascii_digit() || joins_digits {
                        j += 1;
                    } else {
                        break;
                    }
                }
                // digits glued to letters ("3d", "mp4") are a word, not a numeral
                if j < chars.len() && chars[j].is_alphanumeric() {
                    let mut word = String::new();
                    while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '\'') {
                        j += 1;
                    }
                    for ch in &chars[start..j] {
                        if *ch != '\'' && *ch != ',' && *ch != '.' {
                            word.extend(ch.to_lowercase());
                        }
                    }
                    out.push(word);
                } else {
                    let literal: String = chars[start..j].iter().collect();
                    push_number(&literal, &mut out);
                }
                i = j;
            } else if c.is_alphanumeric() {
                let mut word = String::new();
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '\'') {
                    if chars[i] != '\'' {
                        word.extend(chars[i].to_lowercase());
                    }
                    i += 1;
                }
                out.push(word);
            } else {
                i += 1;
            }
        }
    }
    out
}
