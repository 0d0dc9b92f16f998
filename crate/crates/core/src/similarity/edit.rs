/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    if a.is_ascii() && b.is_ascii() {
        distance(a.as_bytes(), b.as_bytes())
    } else {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        distance(&a, &b)
    }
}

/// Two-row dynamic program; rows live on the stack for short inputs.
fn distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    const STACK: usize = 64;
    if a.is_empty() {
        return b.len();
    }
    let n = b.len() + 1;
    let (mut sp, mut sc) = ([0usize; STACK], [0usize; STACK]);
    let (mut hp, mut hc);
    let (mut prev, mut cur): (&mut [usize], &mut [usize]) = if n <= STACK {
        (&mut sp[..n], &mut sc[..n])
    } else {
        hp = vec![0; n];
        hc = vec![0; n];
        (&mut hp, &mut hc)
    };
    for (j, x) in prev.iter_mut().enumerate() {
        *x = j;
    }
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 − lev(a, b) / max(|a|, |b|)`, with two empty strings scoring 1.
pub fn edit_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}
