//! Files written by `simulate`: trajectory, envelope, fits, summary, plots.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use anyhow::Context;
use lie_es::analysis::{fit_summary, Envelope};
use lie_es::config::Experiment;
use lie_es::sim::{ESConfig, Trajectory};
use lie_es::{DecayFit, ModelComparison};

pub struct RunReport<'a> {
    pub exp: &'a Experiment,
    pub cfg: &'a ESConfig,
    pub traj: &'a Trajectory,
    pub x_star: &'a [f64],
    pub initial_speed: f64,
    pub env: &'a Envelope,
    pub comparison: Option<&'a ModelComparison>,
    pub comparison_error: Option<String>,
    pub late: Option<&'a DecayFit>,
    pub late_error: Option<String>,
    pub seed: u64,
    pub spot_failures: usize,
}

pub fn envelope_csv(env: &[(f64, f64)]) -> String {
    let mut s = String::from("t,envelope\n");
    for (t, e) in env {
        let _ = writeln!(s, "{t:.16e},{e:.16e}");
    }
    s
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

impl RunReport<'_> {
    pub fn summary(&self) -> String {
        let cfg = self.cfg;
        let tol = self.exp.analysis.tolerance;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "run:            {} from x0 = {}",
            cfg.label,
            fmt_vec(&cfg.x0)
        );
        let _ = writeln!(s, "cost:           {}", cfg.model.label());
        let _ = writeln!(
            s,
            "dither:         N = {}, eps = {:e}, {} pair(s)",
            cfg.order(),
            cfg.epsilon(),
            cfg.spec.pairs.len()
        );
        let _ = writeln!(
            s,
            "integrator:     RK4, h = {:.6e}, {} steps, horizon {} s",
            cfg.step_size(),
            cfg.total_steps(),
            cfg.horizon
        );
        let _ = writeln!(s, "initial speed:  {:.6e}", self.initial_speed);
        match self.traj.diverged_at {
            Some(t) => {
                let note = if cfg.divergence_expected {
                    " (expected)"
                } else {
                    ""
                };
                let _ = writeln!(s, "diverged:       yes, at t = {t:.6}{note}");
            }
            None => {
                let _ = writeln!(
                    s,
                    "diverged:       no (max |x| = {:.6e})",
                    self.traj.max_state_norm
                );
            }
        }
        let final_err = self.traj.final_max_error(self.x_star);
        let _ = writeln!(
            s,
            "final state:    {} at t = {:.6}",
            fmt_vec(self.traj.final_state()),
            self.traj.times.last().copied().unwrap_or(0.0)
        );
        let verdict = if final_err < tol { "within" } else { "outside" };
        let _ = writeln!(
            s,
            "final error:    {final_err:.6e} ({verdict} tolerance {tol})"
        );
        match self.traj.settling_time(self.x_star, tol) {
            Some(t) => {
                let _ = writeln!(s, "settling time:  {t:.6} s");
            }
            None => {
                let _ = writeln!(s, "settling time:  not settled");
            }
        }
        match (self.comparison, &self.comparison_error) {
            (Some(c), _) => s.push_str(&fit_summary(c)),
            (None, Some(e)) => {
                let _ = writeln!(s, "exponential fit: not available ({e})");
            }
            _ => {}
        }
        if let Some(w) = self.exp.analysis.late_window {
            match (self.late, &self.late_error) {
                (Some(f), _) => {
                    let _ = writeln!(
                        s,
                        "late window [{}, {}]: slope = {:.6}, R^2 = {:.6}",
                        w.0, w.1, f.rate, f.r_squared
                    );
                }
                (None, Some(e)) => {
                    let _ = writeln!(s, "late window fit: not available ({e})");
                }
                _ => {}
            }
        }
        let _ = writeln!(
            s,
            "spot check:     J > J* at 1000 points (seed {}): {} violation(s)",
            self.seed, self.spot_failures
        );
        s
    }

    fn fit_csv(&self) -> String {
        let mut s = format!("fit,{}\n", DecayFit::CSV_HEADER);
        if let Some(c) = self.comparison {
            let _ = writeln!(s, "exponential,{}", c.exponential.csv_row());
            let _ = writeln!(s, "polynomial,{}", c.polynomial.csv_row());
        }
        if let Some(f) = self.late {
            let _ = writeln!(s, "late_polynomial,{}", f.csv_row());
        }
        s
    }

    fn errors(&self) -> Vec<(f64, f64)> {
        (0..self.traj.len())
            .map(|i| (self.traj.times[i], self.traj.distance(i, self.x_star)))
            .collect()
    }

    fn plot_dat(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# panel 1: t |x - x*| (recorded samples)");
        for (t, e) in self.errors() {
            let _ = writeln!(s, "{t:.10e} {e:.10e}");
        }
        let _ = writeln!(s, "\n\n# panel 2: t envelope");
        for (t, e) in self.env {
            let _ = writeln!(s, "{t:.10e} {e:.10e}");
        }
        if let Some(c) = self.comparison {
            let f = &c.exponential;
            let _ = writeln!(s, "\n\n# panel 3: t rho + lambda' exp(-gamma t)");
            for (t, _) in self.env {
                let _ = writeln!(
                    s,
                    "{t:.10e} {:.10e}",
                    f.floor + f.prefactor * (-f.rate * t).exp()
                );
            }
        }
        s
    }

    fn svg(&self) -> String {
        let mut series = vec![SvgSeries {
            name: "|x - x*|",
            color: "#9aa5b1",
            points: thin(&self.errors(), 4000),
        }];
        series.push(SvgSeries {
            name: "envelope",
            color: "#1f4e79",
            points: self.env.clone(),
        });
        if let Some(c) = self.comparison {
            let f = &c.exponential;
            series.push(SvgSeries {
                name: "exponential fit",
                color: "#c0392b",
                points: self
                    .env
                    .iter()
                    .filter(|(t, _)| *t >= f.window.0 && *t <= f.window.1)
                    .map(|&(t, _)| (t, f.floor + f.prefactor * (-f.rate * t).exp()))
                    .collect(),
            });
        }
        svg_log_plot(
            &format!("{} from x0 = {}", self.cfg.label, fmt_vec(&self.cfg.x0)),
            &series,
        )
    }

    pub fn write_all(&self, dir: &Path, suffix: &str) -> anyhow::Result<()> {
        let path = |stem: &str, ext: &str| dir.join(format!("{stem}{suffix}.{ext}"));
        let traj_path = path("trajectory", "csv");
        let file = fs::File::create(&traj_path)
            .with_context(|| format!("cannot write {}", traj_path.display()))?;
        self.traj.write_csv(BufWriter::new(file))?;
        fs::write(path("envelope", "csv"), envelope_csv(self.env))?;
        fs::write(path("fit", "csv"), self.fit_csv())?;
        fs::write(path("summary", "txt"), self.summary())?;
        if self.exp.output.plot_data {
            fs::write(path("plot", "dat"), self.plot_dat())?;
        }
        if self.exp.output.svg {
            fs::write(path("plot", "svg"), self.svg())?;
        }
        Ok(())
    }
}

pub struct SvgSeries {
    pub name: &'static str,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

fn thin(points: &[(f64, f64)], max: usize) -> Vec<(f64, f64)> {
    if points.len() <= max {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(max);
    points.iter().step_by(stride).copied().collect()
}

/// Linear time axis, log10 error axis.
fn svg_log_plot(title: &str, series: &[SvgSeries]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;

    let positive = || {
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|p| p.1 > 0.0 && p.1.is_finite())
    };
    let t_max = positive().map(|p| p.0).fold(0.0_f64, f64::max).max(1e-12);
    let t_min = positive()
        .map(|p| p.0)
        .fold(f64::INFINITY, f64::min)
        .min(t_max);
    let lo = positive()
        .map(|p| p.1.log10())
        .fold(f64::INFINITY, f64::min);
    let hi = positive()
        .map(|p| p.1.log10())
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() {
        (lo.floor(), hi.ceil().max(lo.floor() + 1.0))
    } else {
        (-1.0, 0.0)
    };
    let t_min = if t_min.is_finite() {
        t_min.min(0.0)
    } else {
        0.0
    };

    let sx = |t: f64| L + (t - t_min) / (t_max - t_min) * (W - L - R);
    let sy = |e: f64| T + (hi - e.log10()) / (hi - lo) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - L - R,
        H - T - B
    );
    let decades = (hi - lo) as i32;
    let step = (decades / 8).max(1);
    let mut d = lo as i32;
    while d <= hi as i32 {
        let y = sy(10f64.powi(d));
        let _ = writeln!(
            s,
            r##"<line x1="{L}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#e0e0e0"/>"##,
            W - R
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">1e{d}</text>"#,
            L - 6.0,
            y + 4.0
        );
        d += step;
    }
    for i in 0..=5 {
        let t = t_min + (t_max - t_min) * f64::from(i) / 5.0;
        let x = sx(t);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{}" text-anchor="middle">{t:.3}</text>"#,
            H - B + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">t [s]</text>"#,
        (L + W - R) / 2.0,
        H - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">|x - x*|</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );
    for (k, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1 > 0.0 && p.1.is_finite())
            .map(|&(t, e)| format!("{:.2},{:.2}", sx(t), sy(e)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
            ser.color,
            pts.join(" ")
        );
        let ly = T + 16.0 + 16.0 * k as f64;
        let lx = W - R - 150.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            ser.color,
            lx + 26.0,
            ly + 4.0,
            escape(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
