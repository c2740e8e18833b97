use serde::{Deserialize, Serialize};

/// A partition of the model list into colocated sets, as indices into the
/// model list. Sets are ordered by their smallest member.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub sets: Vec<Vec<usize>>,
}

impl Placement {
    pub fn set_of(&self, model: usize) -> usize {
        self.sets
            .iter()
            .position(|s| s.contains(&model))
            .expect("placement covers every model")
    }

    pub fn is_colocate_all(&self) -> bool {
        self.sets.len() == 1
    }

    pub fn describe(&self, names: &[String]) -> String {
        let sets: Vec<String> = self
            .sets
            .iter()
            .map(|s| {
                let members: Vec<&str> = s.iter().map(|&i| names[i].as_str()).collect();
                format!("{{{}}}", members.join(", "))
            })
            .collect();
        sets.join(" ")
    }
}

/// Every set partition of `n` models in restricted-growth-string order:
/// the first is "all colocated", the last "all separate".
pub fn get_placements(n: usize) -> Vec<Placement> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut rgs = vec![0usize; n];
    loop {
        let blocks = rgs.iter().max().unwrap() + 1;
        let mut sets = vec![Vec::new(); blocks];
        for (model, &b) in rgs.iter().enumerate() {
            sets[b].push(model);
        }
        out.push(Placement { sets });
        // next string: rightmost position that can still grow
        let mut i = n - 1;
        loop {
            if i == 0 {
                return out;
            }
            let prefix_max = rgs[..i].iter().max().copied().unwrap_or(0);
            if rgs[i] <= prefix_max {
                rgs[i] += 1;
                for x in rgs.iter_mut().skip(i + 1) {
                    *x = 0;
                }
                break;
            }
            i -= 1;
        }
    }
}

/// Device counts per set summing to exactly `n`, each at least its minimum
/// and a multiple of `granularity`, in lexicographic order.
pub fn enum_alloc(n: u32, minima: &[u32], granularity: u32) -> Vec<Vec<u32>> {
    let g = granularity.max(1);
    let mut out = Vec::new();
    if minima.is_empty() {
        return out;
    }
    let lows: Vec<u32> = minima.iter().map(|&m| m.max(1).div_ceil(g) * g).collect();
    let mut current = Vec::with_capacity(minima.len());
    fill(n, &lows, g, &mut current, &mut out);
    out
}

fn fill(remaining: u32, lows: &[u32], g: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let k = current.len();
    if k + 1 == lows.len() {
        if remaining >= lows[k] && remaining.is_multiple_of(g) {
            current.push(remaining);
            out.push(current.clone());
            current.pop();
        }
        return;
    }
    let rest_min: u32 = lows[k + 1..].iter().sum();
    if remaining < rest_min {
        return;
    }
    let mut a = lows[k];
    while a + rest_min <= remaining {
        current.push(a);
        fill(remaining - a, lows, g, current, out);
        current.pop();
        a += g;
    }
}
