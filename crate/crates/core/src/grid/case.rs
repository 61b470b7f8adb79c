//! Static grid description and its seeded generator.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::powerflow::solve_power_flow;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenKind {
    Renewable,
    Thermal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub v_min: f64,
    pub v_max: f64,
}

/// A pi-model line. Impedances in per-unit on the case base, `limit` is the
/// thermal current limit T_j in per-unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub limit: f64,
}

/// Generator limits in MW / MVAr; cost coefficients act on MW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub kind: GenKind,
    pub bus: usize,
    pub p_max: f64,
    pub p_min: f64,
    pub q_max: f64,
    pub q_min: f64,
    pub v_set: f64,
    pub cost_a: f64,
    pub cost_b: f64,
    pub cost_c: f64,
    pub startup_cost: f64,
    pub ramp_rate: f64,
}

impl Generator {
    /// Fuel cost at output `p` while online, excluding startup.
    pub fn fuel_cost(&self, p: f64) -> f64 {
        self.cost_a * p * p + self.cost_b * p + self.cost_c
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.p_min + self.p_max)
    }

    /// Largest permitted change of output between consecutive days.
    pub fn max_ramp(&self) -> f64 {
        self.ramp_rate * self.p_max
    }
}

/// Base demand in MW / MVAr, scaled per day by the case's load profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

/// Deterministic daily demand multiplier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub seed: u64,
    pub seasonal: f64,
    pub weekly: f64,
    pub noise: f64,
}

impl LoadProfile {
    pub fn flat() -> Self {
        Self {
            seed: 0,
            seasonal: 0.0,
            weekly: 0.0,
            noise: 0.0,
        }
    }

    pub fn factor(&self, day: usize) -> f64 {
        let t = day as f64;
        let season = self.seasonal * (std::f64::consts::TAU * t / 365.25).cos();
        let week = if day % 7 >= 5 { -self.weekly } else { 0.0 };
        let noise = if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.seed ^ (day as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            self.noise * (rng.random::<f64>() * 2.0 - 1.0)
        } else {
            0.0
        };
        (1.0 + season + week + noise).max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub base_mva: f64,
    /// Index into `generators` of the unit that balances the system.
    pub slack_gen: usize,
    pub load_profile: LoadProfile,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

impl GridCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branch(&self) -> usize {
        self.branches.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    pub fn n_load(&self) -> usize {
        self.loads.len()
    }

    pub fn slack_bus(&self) -> usize {
        self.generators[self.slack_gen].bus
    }

    /// Indices of renewable units, in generator order.
    pub fn renewables(&self) -> Vec<usize> {
        self.kind_indices(GenKind::Renewable)
    }

    pub fn thermals(&self) -> Vec<usize> {
        self.kind_indices(GenKind::Thermal)
    }

    fn kind_indices(&self, kind: GenKind) -> Vec<usize> {
        (0..self.n_gen())
            .filter(|&i| self.generators[i].kind == kind)
            .collect()
    }

    pub fn n_new(&self) -> usize {
        self.renewables().len()
    }

    /// Demand of every load on a given day, MW and MVAr.
    pub fn loads_on(&self, day: usize) -> (Vec<f64>, Vec<f64>) {
        let f = self.load_profile.factor(day);
        (
            self.loads.iter().map(|l| l.p * f).collect(),
            self.loads.iter().map(|l| l.q * f).collect(),
        )
    }

    /// Cost of running every thermal unit at the midpoint of its range; the
    /// scale that maps operating cost into the reward.
    pub fn reference_cost(&self) -> f64 {
        self.generators
            .iter()
            .filter(|g| g.kind == GenKind::Thermal)
            .map(|g| g.fuel_cost(g.midpoint()))
            .sum::<f64>()
            .max(1e-9)
    }

    /// Branch indices touching each bus.
    pub fn incident_branches(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_bus()];
        for (j, br) in self.branches.iter().enumerate() {
            out[br.from].push(j);
            if br.to != br.from {
                out[br.to].push(j);
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_bus();
        if n == 0 {
            return false;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut components = n;
        for br in &self.branches {
            let (a, b) = (find(&mut parent, br.from), find(&mut parent, br.to));
            if a != b {
                parent[a] = b;
                components -= 1;
            }
        }
        components == 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(format!("grid case: {msg}")));
        if self.buses.is_empty() || self.generators.is_empty() {
            return fail("needs at least one bus and one generator".into());
        }
        if self.slack_gen >= self.n_gen() {
            return fail(format!("slack generator {} does not exist", self.slack_gen));
        }
        if self.generators[self.slack_gen].kind != GenKind::Thermal {
            return fail("slack generator must be thermal".into());
        }
        if !(self.base_mva > 0.0) {
            return fail("base_mva must be positive".into());
        }
        for (k, b) in self.buses.iter().enumerate() {
            if !(b.v_min > 0.0 && b.v_min < b.v_max) {
                return fail(format!(
                    "bus {k} has voltage limits {}..{}",
                    b.v_min, b.v_max
                ));
            }
        }
        for (j, br) in self.branches.iter().enumerate() {
            if br.from >= self.n_bus() || br.to >= self.n_bus() || br.from == br.to {
                return fail(format!("branch {j} joins buses {} and {}", br.from, br.to));
            }
            if !(br.limit > 0.0) || !(br.x.abs() + br.r.abs() > 0.0) {
                return fail(format!("branch {j} needs positive limit and impedance"));
            }
        }
        for (i, g) in self.generators.iter().enumerate() {
            if g.bus >= self.n_bus() {
                return fail(format!("generator {i} sits on missing bus {}", g.bus));
            }
            if !(g.p_min <= g.p_max && g.p_min >= 0.0 && g.q_min <= g.q_max) {
                return fail(format!("generator {i} has inconsistent limits"));
            }
            if !(0.0..=1.0).contains(&g.ramp_rate) {
                return fail(format!("generator {i} ramp rate {}", g.ramp_rate));
            }
        }
        for (l, load) in self.loads.iter().enumerate() {
            if load.bus >= self.n_bus() {
                return fail(format!("load {l} sits on missing bus {}", load.bus));
            }
        }
        if !self.is_connected() {
            return fail("network is not connected".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let case: Self = serde_json::from_str(text)?;
        case.validate()?;
        Ok(case)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Sizes and parameter ranges for [`generate_case`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub n_bus: usize,
    pub n_gen: usize,
    pub n_branch: usize,
    pub n_load: usize,
    pub base_mva: f64,
    /// Nameplate rating of each renewable unit, MW.
    pub renewable_p_max: f64,
    /// Expected renewable output as a fraction of nameplate, used to size demand.
    pub renewable_share: f64,
    pub ramp_rate: f64,
    pub v_set: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub load_seasonal: f64,
    pub load_weekly: f64,
    pub load_noise: f64,
    /// Thermal limits are this multiple of the base-case branch current.
    pub limit_margin: f64,
}

impl Default for CaseSpec {
    fn default() -> Self {
        Self {
            n_bus: 126,
            n_gen: 54,
            n_branch: 185,
            n_load: 91,
            base_mva: 100.0,
            renewable_p_max: 60.0,
            renewable_share: 0.35,
            ramp_rate: 0.05,
            v_set: 1.02,
            v_min: 0.95,
            v_max: 1.05,
            load_seasonal: 0.08,
            load_weekly: 0.03,
            load_noise: 0.02,
            limit_margin: 1.8,
        }
    }
}

impl CaseSpec {
    /// A reduced case for quick experiments.
    pub fn small() -> Self {
        Self {
            n_bus: 30,
            n_gen: 12,
            n_branch: 41,
            n_load: 20,
            ..Self::default()
        }
    }

    pub fn minimal() -> Self {
        Self {
            n_bus: 2,
            n_gen: 1,
            n_branch: 1,
            n_load: 1,
            ..Self::default()
        }
    }
}

/// Cost and size rows of the thermal archetypes: a, b, c, startup, P^max, P^min.
const THERMAL_ROWS: [[f64; 6]; 3] = [
    [0.0285, 17.82, 10.15, 100.0, 110.0, 15.0],
    [0.0109, 22.9423, 32.96, 200.0, 128.0, 25.0],
    [0.0097, 12.8875, 58.81, 880.0, 140.0, 28.0],
];
/// Reference row sizes: 12, 10 and 14 of 36 thermal units.
const THERMAL_SHARES: [usize; 3] = [12, 10, 14];
const RENEWABLE_ROW: [f64; 4] = [0.0696, 26.2438, 31.67, 80.0];
const MAX_ATTEMPTS: usize = 100;

fn thermal_counts(n: usize) -> [usize; 3] {
    let total: usize = THERMAL_SHARES.iter().sum();
    let first = (n * THERMAL_SHARES[0] + total / 2) / total;
    let second = (n * THERMAL_SHARES[1] + total / 2) / total;
    let first = first.min(n);
    let second = second.min(n - first);
    [first, second, n - first - second]
}

/// Seeded synthetic case: a third of the units (rounded down) are renewable,
/// the rest follow the thermal archetypes.
pub fn generate_case(seed: u64, spec: &CaseSpec) -> Result<GridCase> {
    if spec.n_bus == 0 || spec.n_gen == 0 {
        return Err(Error::invalid(
            "case needs at least one bus and one generator",
        ));
    }
    if spec.n_branch + 1 < spec.n_bus {
        return Err(Error::invalid(format!(
            "{} branches cannot connect {} buses",
            spec.n_branch, spec.n_bus
        )));
    }
    if spec.n_gen > spec.n_bus {
        return Err(Error::invalid(format!(
            "{} generators need at least as many buses, got {}",
            spec.n_gen, spec.n_bus
        )));
    }
    if spec.n_bus == 1 && spec.n_branch > 0 {
        return Err(Error::invalid("a single bus cannot hold branches"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let case = draw_case(&mut rng, seed, spec);
        if !case.is_connected() {
            continue;
        }
        if let Some(case) = size_limits(case, spec) {
            return Ok(case);
        }
    }
    Err(Error::CaseGeneration(MAX_ATTEMPTS))
}

fn draw_case(rng: &mut ChaCha8Rng, seed: u64, spec: &CaseSpec) -> GridCase {
    let n_bus = spec.n_bus;
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(spec.n_branch);
    for i in 1..n_bus {
        let j = rng.random_range(i.saturating_sub(4)..i);
        pairs.push((j, i));
    }
    let max_simple = n_bus * (n_bus - 1) / 2;
    let mut tries = 0;
    while pairs.len() < spec.n_branch {
        tries += 1;
        let a = rng.random_range(0..n_bus);
        let span = if tries < 50 * spec.n_branch { 8 } else { n_bus };
        let b = rng.random_range(a.saturating_sub(span)..(a + span + 1).min(n_bus));
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if pairs.len() < max_simple && pairs.contains(&key) {
            continue;
        }
        pairs.push(key);
    }
    let branches = pairs
        .into_iter()
        .map(|(from, to)| {
            let x = rng.random_range(0.01..0.05);
            Branch {
                from,
                to,
                r: x * rng.random_range(0.15..0.3),
                x,
                b: rng.random_range(0.0..0.02),
                limit: 1.0,
            }
        })
        .collect();

    let n_new = spec.n_gen / 3;
    let n_thermal = spec.n_gen - n_new;
    let mut gen_buses: Vec<usize> = (0..n_bus).collect();
    gen_buses.shuffle(rng);
    let mut generators = Vec::with_capacity(spec.n_gen);
    for &bus in gen_buses.iter().take(n_new) {
        let [a, b, c, start] = RENEWABLE_ROW;
        generators.push(Generator {
            kind: GenKind::Renewable,
            bus,
            p_max: spec.renewable_p_max,
            p_min: 0.0,
            q_max: 0.5 * spec.renewable_p_max,
            q_min: -0.3 * spec.renewable_p_max,
            v_set: spec.v_set,
            cost_a: a,
            cost_b: b,
            cost_c: c,
            startup_cost: start,
            ramp_rate: spec.ramp_rate,
        });
    }
    let mut thermal_buses = gen_buses.iter().skip(n_new);
    for (row, count) in THERMAL_ROWS.iter().zip(thermal_counts(n_thermal)) {
        for _ in 0..count {
            let [a, b, c, start, p_max, p_min] = *row;
            generators.push(Generator {
                kind: GenKind::Thermal,
                bus: *thermal_buses.next().expect("n_gen <= n_bus"),
                p_max,
                p_min,
                q_max: 0.5 * p_max,
                q_min: -0.3 * p_max,
                v_set: spec.v_set,
                cost_a: a,
                cost_b: b,
                cost_c: c,
                startup_cost: start,
                ramp_rate: spec.ramp_rate,
            });
        }
    }
    let slack_gen = (0..generators.len())
        .filter(|&i| generators[i].kind == GenKind::Thermal)
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if generators[b].p_max >= generators[i].p_max => Some(b),
            _ => Some(i),
        })
        .expect("at least one thermal unit");

    let thermal_mid: f64 = generators
        .iter()
        .filter(|g| g.kind == GenKind::Thermal)
        .map(Generator::midpoint)
        .sum();
    let total_load = thermal_mid + spec.renewable_share * spec.renewable_p_max * n_new as f64;
    let mut load_buses: Vec<usize> = (0..n_bus).collect();
    load_buses.shuffle(rng);
    let weights: Vec<f64> = (0..spec.n_load)
        .map(|_| rng.random_range(0.5..1.5))
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let loads = weights
        .iter()
        .enumerate()
        .map(|(l, w)| {
            let p = total_load * w / weight_sum;
            Load {
                bus: load_buses[l % n_bus],
                p,
                q: p * rng.random_range(0.15..0.3),
            }
        })
        .collect();

    GridCase {
        base_mva: spec.base_mva,
        slack_gen,
        load_profile: LoadProfile {
            seed,
            seasonal: spec.load_seasonal,
            weekly: spec.load_weekly,
            noise: spec.load_noise,
        },
        buses: vec![
            Bus {
                v_min: spec.v_min,
                v_max: spec.v_max,
            };
            n_bus
        ],
        branches,
        generators,
        loads,
    }
}

/// Solves the reference operating point and derives thermal limits from its
/// branch currents. Rejects draws whose reference point is infeasible.
fn size_limits(mut case: GridCase, spec: &CaseSpec) -> Option<GridCase> {
    let online = vec![true; case.n_gen()];
    let p_set: Vec<f64> = case
        .generators
        .iter()
        .map(|g| match g.kind {
            GenKind::Thermal => g.midpoint(),
            GenKind::Renewable => spec.renewable_share * g.p_max,
        })
        .collect();
    let load_p: Vec<f64> = case.loads.iter().map(|l| l.p).collect();
    let load_q: Vec<f64> = case.loads.iter().map(|l| l.q).collect();
    let sol = solve_power_flow(&case, &online, &p_set, &load_p, &load_q).ok()?;
    if !sol.converged {
        return None;
    }
    if sol
        .v
        .iter()
        .zip(&case.buses)
        .any(|(v, b)| *v < b.v_min || *v > b.v_max)
    {
        return None;
    }
    let slack = &case.generators[case.slack_gen];
    if sol.gen_p[case.slack_gen] < slack.p_min || sol.gen_p[case.slack_gen] > slack.p_max {
        return None;
    }
    let mean_current = if sol.current.is_empty() {
        0.0
    } else {
        sol.current.iter().sum::<f64>() / sol.current.len() as f64
    };
    let floor = (0.25 * mean_current).max(0.05);
    for (br, i) in case.branches.iter_mut().zip(&sol.current) {
        br.limit = (spec.limit_margin * i).max(floor);
    }
    Some(case)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thermal_split_matches_reference_rows() {
        assert_eq!(thermal_counts(36), [12, 10, 14]);
        assert_eq!(thermal_counts(1).iter().sum::<usize>(), 1);
        assert_eq!(thermal_counts(8).iter().sum::<usize>(), 8);
    }

    #[test]
    fn reference_cost_is_positive() {
        let case = generate_case(1, &CaseSpec::small()).unwrap();
        assert!(case.reference_cost() > 0.0);
        assert_eq!(case.n_new(), 4);
    }

    #[test]
    fn profile_factor_is_deterministic() {
        let p = LoadProfile {
            seed: 9,
            seasonal: 0.1,
            weekly: 0.03,
            noise: 0.02,
        };
        assert_eq!(p.factor(17), p.factor(17));
        assert_eq!(LoadProfile::flat().factor(123), 1.0);
    }
}
