//! Brute-force caption metrics: n-grams by explicit enumeration into lists,
//! METEOR alignments by trying every partial matching, LCS by plain
//! recursion. Slow on purpose and only meant for tiny corpora.

type Doc = Vec<String>;

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OracleScores {
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= tokens.len() {
        out.push(tokens[i..i + n].to_vec());
        i += 1;
    }
    out
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

pub fn bleu(cands: &[Doc], refs: &[Vec<Doc>]) -> [f64; 4] {
    let mut hits = [0.0f64; 4];
    let mut totals = [0.0f64; 4];
    let (mut c_len, mut r_len) = (0.0, 0.0);
    for (c, rs) in cands.iter().zip(refs) {
        c_len += c.len() as f64;
        // closest reference length, shorter one on a tie
        let mut best = rs[0].len();
        for r in rs {
            let d = (r.len() as i64 - c.len() as i64).abs();
            let bd = (best as i64 - c.len() as i64).abs();
            if d < bd || (d == bd && r.len() < best) {
                best = r.len();
            }
        }
        r_len += best as f64;
        for n in 1..=4 {
            let cg = grams(c, n);
            totals[n - 1] += cg.len() as f64;
            for g in distinct(&cg) {
                let mut clip = 0;
                for r in rs {
                    clip = clip.max(count(&grams(r, n), &g));
                }
                hits[n - 1] += count(&cg, &g).min(clip) as f64;
            }
        }
    }
    let bp = if c_len == 0.0 {
        0.0
    } else if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len / c_len).exp()
    };
    let mut out = [0.0; 4];
    for n in 1..=4 {
        let ps: Vec<f64> = (0..n).map(|k| if totals[k] == 0.0 { 0.0 } else { hits[k] / totals[k] }).collect();
        if ps.iter().any(|&p| p == 0.0) {
            continue;
        }
        let geo = ps.iter().map(|p| p.ln()).sum::<f64>() / n as f64;
        out[n - 1] = bp * geo.exp();
    }
    out
}

/// Every partial one-to-one matching of equal tokens; returns the best
/// (matches, chunks) with matches maximized first and chunks minimized second.
pub fn best_alignment(c: &[String], r: &[String]) -> (usize, usize) {
    fn rec(c: &[String], r: &[String], i: usize, used: &mut Vec<bool>, pairs: &mut Vec<(usize, usize)>, best: &mut (usize, usize)) {
        if i == c.len() {
            let m = pairs.len();
            let mut chunks = 0;
            for (k, &(ci, ri)) in pairs.iter().enumerate() {
                let continues = k > 0 && pairs[k - 1].0 + 1 == ci && pairs[k - 1].1 + 1 == ri;
                if !continues {
                    chunks += 1;
                }
            }
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        rec(c, r, i + 1, used, pairs, best);
        for j in 0..r.len() {
            if !used[j] && r[j] == c[i] {
                used[j] = true;
                pairs.push((i, j));
                rec(c, r, i + 1, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    rec(c, r, 0, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
    best
}

pub fn meteor_segment(c: &[String], r: &[String]) -> f64 {
    let (m, chunks) = best_alignment(c, r);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / c.len() as f64;
    let rec = m as f64 / r.len() as f64;
    let f = 10.0 * p * rec / (rec + 9.0 * p);
    let frag = chunks as f64 / m as f64;
    f * (1.0 - 0.5 * frag * frag * frag)
}

pub fn meteor(cands: &[Doc], refs: &[Vec<Doc>]) -> f64 {
    let scores: Vec<f64> = cands
        .iter()
        .zip(refs)
        .map(|(c, rs)| rs.iter().map(|r| meteor_segment(c, r)).fold(0.0, f64::max))
        .collect();
    scores.iter().sum::<f64>() / scores.len() as f64
}

pub fn lcs(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    if a[0] == b[0] {
        return 1 + lcs(&a[1..], &b[1..]);
    }
    lcs(&a[1..], b).max(lcs(a, &b[1..]))
}

pub fn rouge_l(cands: &[Doc], refs: &[Vec<Doc>]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut total = 0.0;
    for (c, rs) in cands.iter().zip(refs) {
        let mut p: f64 = 0.0;
        let mut rc: f64 = 0.0;
        for r in rs {
            let l = lcs(c, r) as f64;
            if !c.is_empty() {
                p = p.max(l / c.len() as f64);
            }
            if !r.is_empty() {
                rc = rc.max(l / r.len() as f64);
            }
        }
        if p > 0.0 && rc > 0.0 {
            total += (1.0 + beta2) * p * rc / (rc + beta2 * p);
        }
    }
    total / cands.len() as f64
}

pub fn cider(cands: &[Doc], refs: &[Vec<Doc>]) -> f64 {
    let n_docs = refs.len() as f64;
    // document frequency: number of reference sets containing the n-gram
    let df = |g: &[String]| -> f64 {
        refs.iter().filter(|rs| rs.iter().any(|r| count(&grams(r, g.len()), g) > 0)).count() as f64
    };
    let vector = |doc: &[String], n: usize| -> Vec<(Vec<String>, f64)> {
        let gs = grams(doc, n);
        distinct(&gs)
            .into_iter()
            .map(|g| {
                let tf = count(&gs, &g) as f64 / gs.len() as f64;
                let idf = n_docs.ln() - df(&g).max(1.0).ln();
                (g, tf * idf)
            })
            .collect()
    };
    let norm = |v: &[(Vec<String>, f64)]| v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    let mut total = 0.0;
    for (c, rs) in cands.iter().zip(refs) {
        let mut per_ref = 0.0;
        for r in rs {
            let delta = c.len() as f64 - r.len() as f64;
            let damp = (-delta * delta / 72.0).exp();
            let mut s = 0.0;
            for n in 1..=4 {
                let (cv, rv) = (vector(c, n), vector(r, n));
                let (nc, nr) = (norm(&cv), norm(&rv));
                if nc == 0.0 || nr == 0.0 {
                    continue;
                }
                let mut dot = 0.0;
                for (g, w) in &cv {
                    for (h, x) in &rv {
                        if g == h {
                            dot += w * x;
                        }
                    }
                }
                s += dot / (nc * nr);
            }
            per_ref += damp * s / 4.0;
        }
        total += 10.0 * per_ref / rs.len() as f64;
    }
    total / n_docs
}

pub fn score(cands: &[Doc], refs: &[Vec<Doc>]) -> OracleScores {
    OracleScores { bleu: bleu(cands, refs), meteor: meteor(cands, refs), rouge_l: rouge_l(cands, refs), cider: cider(cands, refs) }
}
