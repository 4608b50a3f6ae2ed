//! Turns an inference trace into a symbol trace: effective-sample-size peaks
//! mark settled controllers, whose MAP parameters are clustered into a
//! controller library.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::program::{ControllerLibrary, ControllerParams, SymbolId};
use crate::smc::InferenceTrace;
use crate::world::JointState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakConfig {
    /// Odd moving-average width.
    pub smoothing_window: usize,
    /// Minimum index gap between reported peaks.
    pub min_distance: usize,
    /// Minimum topographic prominence as a fraction of the particle count.
    pub min_prominence: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig {
            smoothing_window: 5,
            min_distance: 5,
            min_prominence: 0.1,
        }
    }
}

impl PeakConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return Err(Error::Config("smoothing_window must be odd and positive".into()));
        }
        if self.min_distance == 0 {
            return Err(Error::Config("min_distance must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.min_prominence) {
            return Err(Error::Config("min_prominence must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Centered moving average; the window shrinks at the ends.
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(series.len());
            series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Height of peak `i` above the higher of the two lowest points separating
/// it from taller terrain (or the series ends).
fn prominence(s: &[f64], i: usize) -> f64 {
    let h = s[i];
    let mut left_min = h;
    for j in (0..i).rev() {
        if s[j] > h {
            break;
        }
        left_min = left_min.min(s[j]);
    }
    let mut right_min = h;
    for &v in &s[i + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Interior local maxima of the smoothed series whose prominence is at least
/// `min_prominence · scale`, thinned so that no two are closer than
/// `min_distance` (the taller survives, ties go to the earlier index).
pub fn detect_peaks(series: &[f64], cfg: &PeakConfig, scale: f64) -> Result<Vec<usize>> {
    cfg.validate()?;
    if series.len() < 3 {
        return Ok(Vec::new());
    }
    let s = smooth(series, cfg.smoothing_window);
    let threshold = cfg.min_prominence * scale;
    let mut candidates: Vec<usize> = Vec::new();
    let mut i = 1;
    while i + 1 < s.len() {
        if s[i] > s[i - 1] {
            // walk across a flat top; it counts when the far side falls
            let mut j = i;
            while j + 1 < s.len() && s[j + 1] == s[i] {
                j += 1;
            }
            if j + 1 < s.len() && s[j + 1] < s[i] && prominence(&s, i) >= threshold {
                candidates.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    candidates.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= cfg.min_distance) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

pub fn extract_map_controllers(trace: &InferenceTrace, peaks: &[usize]) -> Result<Vec<ControllerParams>> {
    peaks
        .iter()
        .map(|&p| {
            trace
                .steps
                .get(p)
                .map(|s| s.map.clone())
                .ok_or_else(|| Error::invalid(format!("peak {p} outside trace of length {}", trace.len())))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k_max: usize,
    /// RMS distance to the mean below which all goals form one cluster.
    pub single_cluster_spread: f64,
    /// Expected scatter of MAP goals around their controller's goal; a WCSS
    /// below `n · noise_spread²` counts as zero.
    pub noise_spread: f64,
    pub max_iterations: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k_max: 10,
            single_cluster_spread: 0.05,
            noise_spread: 0.01,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub wcss: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Lloyd's algorithm with farthest-point seeding. The first seed is the point
/// farthest from the centroid and each later seed maximises its distance to
/// the chosen ones; ties break lexicographically so the result does not
/// depend on input order.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iterations: usize) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!("cannot form {k} clusters from {} points", points.len())));
    }
    let dim = points[0].len();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]));
    let sorted: Vec<&[f64]> = order.iter().map(|&i| points[i].as_slice()).collect();

    let mut centroid = vec![0.0; dim];
    for p in &sorted {
        centroid.iter_mut().zip(p.iter()).for_each(|(c, v)| *c += v);
    }
    centroid.iter_mut().for_each(|c| *c /= sorted.len() as f64);

    let farthest = |score: &dyn Fn(&[f64]) -> f64| -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, p) in sorted.iter().enumerate() {
            let s = score(p);
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        best
    };
    let mut centers: Vec<Vec<f64>> = vec![sorted[farthest(&|p| dist2(p, &centroid))].to_vec()];
    while centers.len() < k {
        let next = farthest(&|p| {
            centers
                .iter()
                .map(|c| dist2(p, c))
                .fold(f64::INFINITY, f64::min)
        });
        centers.push(sorted[next].to_vec());
    }

    let assign = |centers: &[Vec<f64>], p: &[f64]| -> usize {
        let mut best = 0;
        for (c, center) in centers.iter().enumerate() {
            if dist2(p, center) < dist2(p, &centers[best]) {
                best = c;
            }
        }
        best
    };
    let mut labels: Vec<usize> = sorted.iter().map(|p| assign(&centers, p)).collect();
    for _ in 0..max_iterations {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in sorted.iter().zip(&labels) {
            sums[l].iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = sorted.iter().map(|p| assign(&centers, p)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let wcss = sorted
        .iter()
        .zip(&labels)
        .map(|(p, &l)| dist2(p, &centers[l]))
        .sum();
    let mut assignments = vec![0; points.len()];
    for (pos, &orig) in order.iter().enumerate() {
        assignments[orig] = labels[pos];
    }
    Ok(KMeans {
        centers,
        assignments,
        wcss,
    })
}

/// Elbow of the WCSS curve `wcss[k-1]`, `k = 1..=wcss.len()`: the `k` in
/// `2..wcss.len()` maximising the second difference of `ln max(WCSS, floor)`.
pub fn elbow(wcss: &[f64], floor: f64) -> usize {
    if wcss.len() < 3 {
        return wcss.len().max(1);
    }
    let floor = floor.max(f64::MIN_POSITIVE);
    let logs: Vec<f64> = wcss.iter().map(|w| w.max(floor).ln()).collect();
    let mut best_k = 2;
    let mut best = f64::NEG_INFINITY;
    for k in 2..wcss.len() {
        // logs index k-1 holds WCSS(k)
        let d2 = logs[k - 2] - 2.0 * logs[k - 1] + logs[k];
        if d2 > best {
            best = d2;
            best_k = k;
        }
    }
    best_k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolTrace {
    pub symbols: Vec<SymbolId>,
    pub peak_times: Vec<usize>,
}

impl SymbolTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("symbol,peak_time\n");
        for (sym, t) in self.symbols.iter().zip(&self.peak_times) {
            s.push_str(&format!("{sym},{t}\n"));
        }
        s
    }

    pub fn from_csv(text: &str, origin: &std::path::Path) -> Result<Self> {
        let mut out = SymbolTrace {
            symbols: Vec::new(),
            peak_times: Vec::new(),
        };
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::format(origin, format!("line {}: expected symbol,peak_time", i + 1));
            let (s, t) = line.split_once(',').ok_or_else(bad)?;
            out.symbols.push(s.trim().parse().map_err(|_| bad())?);
            out.peak_times.push(t.trim().parse().map_err(|_| bad())?);
        }
        if out.peak_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format(origin, "peak times must be strictly increasing"));
        }
        Ok(out)
    }
}

/// Clusters MAP goals (gains excluded from the distance), picking `k` by the
/// elbow rule. Cluster ids are numbered by first appearance; each cluster's
/// gain is the median of its members.
pub fn cluster_controllers(
    map_params: &[ControllerParams],
    k_max: usize,
    cfg: &ClusterConfig,
) -> Result<(ControllerLibrary, Vec<SymbolId>)> {
    if k_max < 1 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    if map_params.is_empty() {
        return Err(Error::invalid("no controllers to cluster"));
    }
    let points: Vec<Vec<f64>> = map_params.iter().map(|p| p.goal.0.clone()).collect();
    let k_max = k_max.min(points.len());
    let fits = (1..=k_max)
        .map(|k| kmeans(&points, k, cfg.max_iterations))
        .collect::<Result<Vec<_>>>()?;
    let n = points.len();
    let spread = (fits[0].wcss / n as f64).sqrt();
    let k = if spread < cfg.single_cluster_spread || k_max == 1 {
        1
    } else {
        // one point past k_max so that k_max itself can be chosen
        let mut wcss: Vec<f64> = fits.iter().map(|f| f.wcss).collect();
        wcss.push(if k_max < n { kmeans(&points, k_max + 1, cfg.max_iterations)?.wcss } else { 0.0 });
        elbow(&wcss, n as f64 * cfg.noise_spread * cfg.noise_spread)
    };
    let fit = &fits[k - 1];

    let mut relabel = vec![None; k];
    let mut next = 0;
    let mut symbols = Vec::with_capacity(points.len());
    for &a in &fit.assignments {
        let id = *relabel[a].get_or_insert_with(|| {
            next += 1;
            next - 1
        });
        symbols.push(id as SymbolId);
    }
    let mut controllers = Vec::with_capacity(next);
    for (cluster, label) in relabel.iter().enumerate() {
        let Some(label) = label else { continue };
        let mut gains: Vec<f64> = fit
            .assignments
            .iter()
            .zip(map_params)
            .filter(|(&a, _)| a == cluster)
            .map(|(_, p)| p.gain)
            .collect();
        gains.sort_by(f64::total_cmp);
        let m = gains.len();
        let median = if m % 2 == 1 {
            gains[m / 2]
        } else {
            0.5 * (gains[m / 2 - 1] + gains[m / 2])
        };
        controllers.push((*label, ControllerParams::new(JointState(fit.centers[cluster].clone()), median)?));
    }
    controllers.sort_by_key(|(l, _)| *l);
    Ok((
        ControllerLibrary::new(controllers.into_iter().map(|(_, c)| c).collect()),
        symbols,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SymbolizerConfig {
    pub peaks: PeakConfig,
    pub clustering: ClusterConfig,
    /// Collapse consecutive peaks assigned to the same controller.
    pub merge_repeats: bool,
    /// Treat the end of the demonstration as a switch so the final
    /// controller's plateau can form a peak.
    pub close_final_segment: bool,
}

impl Default for SymbolizerConfig {
    fn default() -> Self {
        SymbolizerConfig {
            peaks: PeakConfig::default(),
            clustering: ClusterConfig::default(),
            merge_repeats: true,
            close_final_segment: true,
        }
    }
}

/// Peaks → MAP controllers → clusters.
pub fn symbolize(
    trace: &InferenceTrace,
    particles: usize,
    cfg: &SymbolizerConfig,
) -> Result<(ControllerLibrary, SymbolTrace)> {
    let mut series = trace.n_eff();
    if cfg.close_final_segment && !series.is_empty() {
        series.push(1.0);
    }
    let peaks = detect_peaks(&series, &cfg.peaks, particles as f64)?;
    if peaks.is_empty() {
        return Ok((
            ControllerLibrary::default(),
            SymbolTrace {
                symbols: Vec::new(),
                peak_times: Vec::new(),
            },
        ));
    }
    let maps = extract_map_controllers(trace, &peaks)?;
    let (library, symbols) = cluster_controllers(&maps, cfg.clustering.k_max, &cfg.clustering)?;
    let mut out = SymbolTrace {
        symbols: Vec::new(),
        peak_times: Vec::new(),
    };
    for (s, t) in symbols.into_iter().zip(peaks) {
        if cfg.merge_repeats && out.symbols.last() == Some(&s) {
            continue;
        }
        out.symbols.push(s);
        out.peak_times.push(t);
    }
    Ok((library, out))
}

/// Library as CSV: `id,goal_0..goal_{J-1},gain`.
pub fn library_to_csv(library: &ControllerLibrary) -> String {
    let joints = library.controllers().first().map_or(0, |c| c.goal.len());
    let mut s = String::from("id");
    for j in 0..joints {
        s.push_str(&format!(",goal_{j}"));
    }
    s.push_str(",gain\n");
    for (id, c) in library.iter() {
        s.push_str(&id.to_string());
        for g in c.goal.iter() {
            s.push_str(&format!(",{g}"));
        }
        s.push_str(&format!(",{}\n", c.gain));
    }
    s
}

pub fn library_from_csv(text: &str, origin: &std::path::Path) -> Result<ControllerLibrary> {
    let mut controllers = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(origin, format!("line {}: {e}", i + 1)))?;
        if vals.len() < 3 || vals[0] as usize != controllers.len() {
            return Err(Error::format(origin, format!("line {}: ids must be dense 0..C", i + 1)));
        }
        let c = ControllerParams::new(JointState(vals[1..vals.len() - 1].to_vec()), vals[vals.len() - 1])
            .map_err(|e| Error::format(origin, format!("line {}: {e}", i + 1)))?;
        controllers.push(c);
    }
    Ok(ControllerLibrary::new(controllers))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(window: usize, dist: usize, prom: f64) -> PeakConfig {
        PeakConfig {
            smoothing_window: window,
            min_distance: dist,
            min_prominence: prom,
        }
    }

    #[test]
    fn peak_examples() {
        let s = [10.0, 30.0, 45.0, 30.0, 10.0, 35.0, 48.0, 20.0];
        assert_eq!(detect_peaks(&s, &cfg(1, 2, 0.0), 50.0).unwrap(), vec![2, 6]);
        let mono: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert!(detect_peaks(&mono, &cfg(1, 2, 0.0), 50.0).unwrap().is_empty());
        assert!(detect_peaks(&[7.0; 12], &cfg(3, 2, 0.0), 50.0).unwrap().is_empty());
    }

    #[test]
    fn min_distance_keeps_the_taller_peak() {
        let s = [0.0, 5.0, 0.0, 9.0, 0.0, 4.0, 0.0];
        assert_eq!(detect_peaks(&s, &cfg(1, 3, 0.0), 10.0).unwrap(), vec![3]);
        assert_eq!(detect_peaks(&s, &cfg(1, 2, 0.0), 10.0).unwrap(), vec![1, 3, 5]);
    }

    #[test]
    fn prominence_filters_bumps() {
        // bump at 3 rises only 1 above its saddle at index 4
        let s = [0.0, 10.0, 2.0, 5.0, 4.0, 20.0, 0.0];
        assert_eq!(detect_peaks(&s, &cfg(1, 1, 0.1), 20.0).unwrap(), vec![1, 5]);
        assert_eq!(detect_peaks(&s, &cfg(1, 1, 0.0), 20.0).unwrap(), vec![1, 3, 5]);
    }

    #[test]
    fn invalid_peak_config() {
        assert!(detect_peaks(&[1.0; 10], &cfg(2, 1, 0.0), 1.0).is_err());
        assert!(detect_peaks(&[1.0; 10], &cfg(1, 0, 0.0), 1.0).is_err());
    }

    fn params(goal: Vec<f64>, gain: f64) -> ControllerParams {
        ControllerParams::new(goal.into(), gain).unwrap()
    }

    #[test]
    fn identical_params_form_one_cluster() {
        let ps = vec![params(vec![0.5, 0.5], 2.0); 8];
        let (lib, syms) = cluster_controllers(&ps, 5, &ClusterConfig::default()).unwrap();
        assert_eq!(lib.len(), 1);
        assert!(syms.iter().all(|&s| s == 0));
    }

    #[test]
    fn extract_rejects_out_of_range_peaks() {
        let trace = InferenceTrace::default();
        assert!(extract_map_controllers(&trace, &[]).unwrap().is_empty());
        assert!(extract_map_controllers(&trace, &[3]).is_err());
    }

    #[test]
    fn cluster_gain_is_member_median() {
        let ps = vec![
            params(vec![0.0], 1.0),
            params(vec![0.01], 3.0),
            params(vec![0.02], 2.0),
            params(vec![5.0], 4.0),
            params(vec![5.01], 5.0),
        ];
        let (lib, syms) = cluster_controllers(&ps, 1, &ClusterConfig::default()).unwrap();
        assert_eq!(syms, vec![0; 5]);
        assert_eq!(lib.controllers()[0].gain, 3.0);
        let (lib, syms) = cluster_controllers(&ps, 2, &ClusterConfig::default()).unwrap();
        assert_eq!(syms, vec![0, 0, 0, 1, 1]);
        assert_eq!(lib.controllers()[0].gain, 2.0);
        assert_eq!(lib.controllers()[1].gain, 4.5);
    }

    #[test]
    fn three_separated_groups() {
        // groups 1.0 apart, jitter 0.1
        let mut rng = crate::seed::rng(3);
        let centers = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let mut ps = Vec::new();
        let mut truth = Vec::new();
        for i in 0..30 {
            let c = centers[(i * 7) % 3];
            let g: Vec<f64> = c.iter().map(|v| v + rand::Rng::gen_range(&mut rng, -0.1..0.1)).collect();
            ps.push(params(g, 2.0));
            truth.push((i * 7) % 3);
        }
        let (lib, syms) = cluster_controllers(&ps, 10, &ClusterConfig::default()).unwrap();
        assert_eq!(lib.len(), 3);
        for i in 0..30 {
            for j in 0..30 {
                assert_eq!(syms[i] == syms[j], truth[i] == truth[j]);
            }
        }
    }

    #[test]
    fn well_separated_singletons_stay_apart() {
        let ps: Vec<ControllerParams> = (0..6).map(|i| params(vec![i as f64 * 0.3, 1.0], 2.0)).collect();
        let (lib, syms) = cluster_controllers(&ps, 10, &ClusterConfig::default()).unwrap();
        assert_eq!(lib.len(), 6);
        assert_eq!(syms, vec![0, 1, 2, 3, 4, 5]);
        // a near-duplicate joins its neighbour
        let mut dup = ps.clone();
        dup.push(params(vec![0.6 + 0.005, 1.0], 2.0));
        let (lib, syms) = cluster_controllers(&dup, 10, &ClusterConfig::default()).unwrap();
        assert_eq!(lib.len(), 6);
        assert_eq!(syms[6], syms[2]);
    }

    #[test]
    fn elbow_floor() {
        assert_eq!(elbow(&[100.0, 10.0, 1e-9, 0.0], 1e-3), 3);
        assert_eq!(elbow(&[100.0, 50.0, 25.0, 1e-9, 0.0], 1e-3), 4);
    }

    #[test]
    fn csv_round_trips() {
        let lib = ControllerLibrary::new(vec![params(vec![0.25, -1.5], 2.0), params(vec![1.0, 0.0], 0.5)]);
        let back = library_from_csv(&library_to_csv(&lib), std::path::Path::new("x")).unwrap();
        assert_eq!(back, lib);
        let st = SymbolTrace {
            symbols: vec![1, 0, 1],
            peak_times: vec![4, 20, 51],
        };
        assert_eq!(SymbolTrace::from_csv(&st.to_csv(), std::path::Path::new("x")).unwrap(), st);
    }
}
