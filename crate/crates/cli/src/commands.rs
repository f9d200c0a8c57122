use std::fs;
use std::path::Path;

use laminate_core::dynamics::{simulate_multibody, SimulationConfig};
use laminate_core::hinge_models::{
    air_model, comprehensive_model, fit_quadratic_surface, length_model, width_model,
};
use laminate_core::identification::{
    dropout_summary, identify_recording, recording_from_trajectory, IdentifyConfig, MocapRecording,
    PendulumProperties, SmootherConfig,
};
use laminate_core::kinematics::Multibody;
use laminate_core::mechanism::{parse_mechanism, MechanismSpec};
use laminate_core::output::{angle_plot, frame_dump, trajectory_csv, velocity_plot, Plot, Series};
use laminate_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use crate::manifest::OutputDir;
use crate::{FitSurfaceArgs, GlobalArgs, HingeArgs, HingeModel, IdentifyArgs, SimulateArgs, SynthArgs, ValidateArgs};

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<(Vec<u8>, String)> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Error::Schema(format!("{} is not UTF-8 text", path.display())))?;
    Ok((bytes, text))
}

fn load_mechanism(path: &Path) -> Result<(Vec<u8>, MechanismSpec)> {
    let (bytes, text) = read_text(path)?;
    Ok((bytes, parse_mechanism(&text)?))
}

fn simulation_config(g: &GlobalArgs, default_duration: f64) -> SimulationConfig {
    let mut config = SimulationConfig {
        production_duration: default_duration,
        ..Default::default()
    };
    if let Some(dt) = g.dt {
        config.dt = dt;
    }
    if let Some(alpha) = g.alpha {
        config.baumgarte.alpha = alpha;
    }
    if let Some(beta) = g.beta {
        config.baumgarte.beta = beta;
    }
    if let Some(steps) = g.burn_in_steps {
        config.burn_in_steps = steps;
    }
    if g.burn_in_dt.is_some() {
        config.burn_in_dt = g.burn_in_dt;
    }
    if let Some(d) = g.duration {
        config.production_duration = d;
    }
    config
}

fn config_echo(c: &SimulationConfig) -> Value {
    json!({
        "dt": c.dt,
        "burn_in_steps": c.burn_in_steps,
        "burn_in_dt": c.burn_in_step(),
        "duration": c.production_duration,
        "alpha": c.baumgarte.alpha,
        "beta": c.baumgarte.beta,
        "constraint_tolerance": c.constraint_tolerance,
        "hold_torques_during_burn_in": c.hold_torques_during_burn_in,
    })
}

pub fn simulate(g: &GlobalArgs, a: &SimulateArgs) -> Result<Value> {
    let (bytes, spec) = load_mechanism(&a.mechanism)?;
    let mut config = simulation_config(g, 5.0);
    if let Some(tol) = a.constraint_tolerance {
        config.constraint_tolerance = tol;
    }
    if !(a.frame_rate > 0.0) {
        return Err(Error::Value(format!("frame rate must be positive, got {}", a.frame_rate)));
    }
    let mb = Multibody::new(&spec)?;
    let result = simulate_multibody(&mb, &config)?;
    let production = &result.production;

    let mut out = OutputDir::create(&g.out_dir)?;
    out.write("trajectory.csv", trajectory_csv(production).as_bytes())?;
    out.write("burn_in.csv", trajectory_csv(&result.burn_in).as_bytes())?;
    out.write("angles.svg", angle_plot(production).to_svg().as_bytes())?;
    out.write("velocities.svg", velocity_plot(production).to_svg().as_bytes())?;
    let frames = serde_json::to_string(&frame_dump(&mb, production, a.frame_rate)).expect("frames serialize");
    out.write("frames.json", frames.as_bytes())?;

    let mut echo = config_echo(&config);
    echo["frame_rate"] = json!(a.frame_rate);
    let manifest = out.finish("simulate", &a.mechanism, &bytes, echo)?;

    let last = production.last().expect("production holds its initial sample");
    let final_angles: serde_json::Map<String, Value> = production
        .joint_ids
        .iter()
        .zip(last.state.q.iter())
        .map(|(id, q)| (id.clone(), json!(q)))
        .collect();
    let worst = production
        .samples
        .iter()
        .map(|s| s.constraint_error)
        .fold(0.0, f64::max);
    Ok(json!({
        "rows": production.samples.len(),
        "burn_in_rows": result.burn_in.samples.len(),
        "final_time": last.state.t,
        "final_angles": final_angles,
        "max_constraint_error": worst,
        "outputs": manifest.outputs.iter().map(|o| o.file.clone()).collect::<Vec<_>>(),
        "manifest_sha256": manifest.manifest_sha256,
    }))
}

fn pendulum_properties(a: &IdentifyArgs) -> Result<PendulumProperties> {
    if let Some(path) = &a.mechanism {
        let (_, spec) = load_mechanism(path)?;
        let joint = a.joint.as_deref().expect("clap requires --joint with --mechanism");
        return PendulumProperties::from_mechanism(&spec, joint);
    }
    match (a.mass, a.inertia_com, a.lever) {
        (Some(mass), Some(inertia_com), Some(lever)) => {
            if !(mass > 0.0 && inertia_com >= 0.0 && lever >= 0.0) {
                return Err(Error::Value("mass must be positive; inertia and lever non-negative".into()));
            }
            Ok(PendulumProperties {
                inertia_com,
                mass,
                lever,
            })
        }
        _ => Err(Error::Value(
            "give --mechanism with --joint, or all of --mass, --inertia-com and --lever".into(),
        )),
    }
}

pub fn identify(g: &GlobalArgs, a: &IdentifyArgs) -> Result<Value> {
    let (bytes, text) = read_text(&a.recording)?;
    let rec = MocapRecording::from_csv(&text)?;
    let pick = |given: &Option<String>, slot: usize| -> Result<String> {
        match given {
            Some(id) => Ok(id.clone()),
            None => rec.bodies.get(slot).cloned().ok_or_else(|| {
                Error::Value("the recording needs two bodies, or name them with --parent/--child".into())
            }),
        }
    };
    let (parent, child) = (pick(&a.parent, 0)?, pick(&a.child, 1)?);
    let props = pendulum_properties(a)?;
    let defaults = SmootherConfig::default();
    let config = IdentifyConfig {
        smoother: SmootherConfig {
            order: a.order.unwrap_or(defaults.order),
            window_periods: a.window_periods.unwrap_or(defaults.window_periods),
        },
        gravity: a.gravity,
    };
    let id = identify_recording(&rec, &parent, &child, &props, &config)?;
    let report = &id.report;

    let longest = (0..id.segments.len())
        .max_by_key(|&i| id.segments[i].len())
        .expect("at least one segment");
    let (seg, smooth) = (&id.segments[longest], &id.smoothed[longest]);
    let mut series = vec![Series::new("measured", &seg.t, &seg.theta)];
    if !smooth.t.is_empty() {
        let dt = (smooth.t[smooth.t.len() - 1] - smooth.t[0]) / (smooth.t.len().max(2) - 1) as f64;
        let model = props.simulate(
            report.k,
            report.b,
            a.gravity,
            (smooth.theta[0], smooth.thetadot[0]),
            &smooth.t,
            dt.max(1e-6) / 4.0,
        );
        series.push(Series::new("Fourier smoothed", &smooth.t, &smooth.theta));
        series.push(Series::new("identified model", &smooth.t, &model).dashed());
    }
    let plot = Plot {
        title: format!("{child} relative to {parent}"),
        x_label: "time (s)".into(),
        y_label: "angle (rad)".into(),
        series,
    };

    let mut body = serde_json::to_value(report).expect("report serializes");
    body["parent"] = json!(parent);
    body["child"] = json!(child);
    body["dropouts"] = json!(dropout_summary(&rec));
    body["pendulum"] = json!(props);

    let mut out = OutputDir::create(&g.out_dir)?;
    out.write(
        "identification.json",
        (serde_json::to_string_pretty(&body).expect("report serializes") + "\n").as_bytes(),
    )?;
    out.write("identify_fit.svg", plot.to_svg().as_bytes())?;
    let echo = json!({
        "parent": parent,
        "child": child,
        "order": config.smoother.order,
        "window_periods": config.smoother.window_periods,
        "gravity": config.gravity,
        "pendulum": props,
    });
    out.finish("identify", &a.recording, &bytes, echo)?;
    Ok(body)
}

pub fn hinge(a: &HingeArgs) -> Result<Value> {
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| Error::Value(format!("the {:?} model needs --{flag}", a.model)))
    };
    let (surface, x) = match a.model {
        HingeModel::Comprehensive => (
            comprehensive_model(),
            vec![need(a.length, "l")?, need(a.width, "w")?, need(a.area, "a")?],
        ),
        HingeModel::Air => (air_model(), vec![need(a.area, "a")?]),
        HingeModel::Width => (width_model(), vec![need(a.width, "w")?]),
        HingeModel::Length => (length_model(), vec![need(a.length, "l")?]),
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Value("design inputs must be finite".into()));
    }
    let props = surface.evaluate(&x);
    let k = if surface.stiffness.is_some() {
        json!(props.stiffness)
    } else {
        Value::Null
    };
    Ok(json!({
        "k": k,
        "b": props.damping,
        "source": props.source.to_string(),
        "clamped": props.clamped,
        "warnings": props.warnings.iter().map(ToString::to_string).collect::<Vec<_>>(),
    }))
}

pub fn fit_surface(a: &FitSurfaceArgs) -> Result<Value> {
    let (_, text) = read_text(&a.table)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Schema(format!("table header: {e}")))?
        .clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("table has no '{name}' column")))
    };
    let inputs: Vec<usize> = a.variables.iter().map(|v| column(v)).collect::<Result<_>>()?;
    let (k_col, b_col) = (column("k_meas")?, column("b_meas")?);

    let (mut points, mut k, mut b) = (Vec::new(), Vec::new(), Vec::new());
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Schema(format!("table row {}: {e}", line + 2)))?;
        let cell = |c: usize| -> Result<f64> {
            record[c]
                .parse::<f64>()
                .map_err(|_| Error::Schema(format!("table row {}: '{}' is not a number", line + 2, &record[c])))
        };
        points.push(inputs.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?);
        k.push(cell(k_col)?);
        b.push(cell(b_col)?);
    }
    Ok(json!({
        "variables": a.variables,
        "samples": points.len(),
        "k": fit_quadratic_surface(&points, &k)?,
        "b": fit_quadratic_surface(&points, &b)?,
    }))
}

pub fn validate(a: &ValidateArgs) -> Result<Value> {
    let (_, spec) = load_mechanism(&a.mechanism)?;
    let mb = Multibody::new(&spec)?;
    Ok(json!({
        "valid": true,
        "bodies": spec.bodies.len(),
        "joints": spec.joints.len(),
        "cycles": spec.cycle_count(),
        "cut_joint": mb.tree.cut_edge.as_ref().map(|c| c.joint.clone()),
    }))
}

fn parse_dropout(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Value(format!("dropout '{s}' should be start:count"));
    let (start, count) = s.split_once(':').ok_or_else(bad)?;
    Ok((start.parse().map_err(|_| bad())?, count.parse().map_err(|_| bad())?))
}

pub fn synth_pendulum(g: &GlobalArgs, a: &SynthArgs) -> Result<Value> {
    let (_, spec) = load_mechanism(&a.mechanism)?;
    let [joint] = spec.joints.as_slice() else {
        return Err(Error::Value(format!(
            "a pendulum has exactly one joint, this mechanism has {}",
            spec.joints.len()
        )));
    };
    if !(a.rate > 0.0) || !(a.noise >= 0.0) {
        return Err(Error::Value("rate must be positive and noise non-negative".into()));
    }
    let config = simulation_config(g, 10.0);
    let result = simulate_multibody(&Multibody::new(&spec)?, &config)?;
    let samples = &result.production.samples;
    let t: Vec<f64> = samples.iter().map(|s| s.state.t).collect();
    let theta: Vec<f64> = samples.iter().map(|s| s.state.q[0]).collect();
    let rate: Vec<f64> = samples.iter().map(|s| s.state.qdot[0]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let normal = Normal::new(0.0, a.noise).map_err(|e| Error::Value(e.to_string()))?;
    let mut rec = recording_from_trajectory(&t, &theta, &rate, a.rate, &joint.axis_direction(), || {
        normal.sample(&mut rng)
    })?;
    rec.bodies = vec![joint.parent.clone(), joint.child.clone()];
    for d in &a.dropout {
        let (start, count) = parse_dropout(d)?;
        if start + count > rec.samples.len() {
            return Err(Error::Value(format!("dropout '{d}' runs past the last sample")));
        }
        for row in &mut rec.samples[start..start + count] {
            row[1] = None;
        }
    }

    let path = a.output.clone().unwrap_or_else(|| g.out_dir.join("recording.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&path, rec.to_csv())?;
    Ok(json!({
        "output": path.display().to_string(),
        "samples": rec.times.len(),
        "rate": rec.rate,
        "bodies": rec.bodies,
        "stiffness": joint.stiffness,
        "damping": joint.damping,
        "noise": a.noise,
        "seed": g.seed,
    }))
}
