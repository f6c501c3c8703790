use std::path::Path;

use advcat::attack::{
    end_to_end_grad_check, evaluate, optimize, surrogate_training_images, texture_grad_check, AttackConfig,
    EvalConfig,
};
use advcat::calibrate::{fit_color_model, make_palette, mse, select_degree, ColorModel, ColorPair};
use advcat::detect::{train_surrogate, SurrogateModel, TAU_IOUS};
use advcat::fixtures::{cylinder_fixture, shirt_fixture, Garment};
use advcat::imageio::{contact_sheet, load_png, save_png, snap_to_palette};
use advcat::mesh::io::{load_mesh, parse_projection, parse_toml, projection_to_toml, read_text, to_toml, write_text};
use advcat::mesh::ClothMesh;
use advcat::render::{ring_angles, CameraRig, Image, LightSpec};
use advcat::scene::{background_set, framing_camera, mannequin, warped_samples, SceneAssets, WarpMode};
use advcat::texture::{TexParams, TextureGenerator, TextureMap};
use advcat::topoproj::{place_pieces, rigid_init, zip_projection};
use advcat::warp::{random_topo_warp, tps3d_perturb, GRID_3D};
use advcat::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{GarmentChoice, ProjectConfig};
use crate::Command;

pub fn dispatch(cmd: Command, cfg: &ProjectConfig, out: &Path) -> Result<()> {
    match cmd {
        Command::Synth => synth(cfg, out),
        Command::Zip => zip(cfg, out),
        Command::Warp => warp(cfg, out),
        Command::Render => render(cfg, out),
        Command::Calibrate => calibrate(cfg, out),
        Command::TrainSurrogate => train(cfg, out),
        Command::Attack => attack(cfg, out),
        Command::Eval => eval(cfg, out),
        Command::Gradcheck => gradcheck(cfg, out),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let io = |e: csv::Error| Error::Format(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn f(v: f64) -> String {
    v.to_string()
}

fn generator(cfg: &ProjectConfig) -> Result<TextureGenerator> {
    TextureGenerator::new(cfg.palette()?, cfg.synth.clone())
}

fn init_params(cfg: &ProjectConfig, gen: &TextureGenerator) -> TexParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    gen.init_params(&mut rng)
}

fn load_params(path: &Path, gen: &TextureGenerator) -> Result<TexParams> {
    let p: TexParams = parse_toml(&read_text(path)?, "texture parameters")?;
    p.validate()?;
    let s = &gen.settings;
    if (p.control.width, p.control.height, p.control.n_colors) != (s.width, s.height, gen.palette.len()) {
        return Err(Error::Validation(format!(
            "{}: parameters do not match the configured texture size or palette",
            path.display()
        )));
    }
    Ok(p)
}

/// Texture from `assets.params`, else `assets.texture`, else a random one
/// drawn from the master seed.
fn texture(cfg: &ProjectConfig, gen: &TextureGenerator) -> Result<TextureMap> {
    if let Some(p) = &cfg.assets.params {
        return gen.hard(&load_params(p, gen)?);
    }
    if let Some(p) = &cfg.assets.texture {
        let img = load_png(p)?;
        if (img.width, img.height) != (gen.settings.width, gen.settings.height) {
            return Err(Error::Validation(format!(
                "{}: texture is {}x{}, configured size is {}x{}",
                p.display(),
                img.width,
                img.height,
                gen.settings.width,
                gen.settings.height
            )));
        }
        return Ok(snap_to_palette(&img, &gen.palette));
    }
    gen.hard(&init_params(cfg, gen))
}

fn scene(cfg: &ProjectConfig) -> Result<SceneAssets> {
    let size = cfg.backgrounds.size;
    let rig = CameraRig {
        width: size,
        image_height: size,
        ..CameraRig::default()
    };
    SceneAssets::new(mannequin()?, rig, (cfg.synth.width, cfg.synth.height))
}

fn surrogate(cfg: &ProjectConfig) -> Result<SurrogateModel> {
    let path = cfg
        .assets
        .surrogate
        .as_ref()
        .ok_or_else(|| Error::Validation("assets.surrogate is required (run train-surrogate)".into()))?;
    let m: SurrogateModel = parse_toml(&read_text(path)?, "surrogate model")?;
    m.validate()?;
    Ok(m)
}

fn color_model(cfg: &ProjectConfig) -> Result<Option<ColorModel>> {
    cfg.assets
        .color_model
        .as_ref()
        .map(|p| {
            let m: ColorModel = parse_toml(&read_text(p)?, "color model")?;
            m.validate()?;
            Ok(m)
        })
        .transpose()
}

fn garment(cfg: &ProjectConfig) -> Result<Garment> {
    let Some(mesh_path) = &cfg.assets.mesh else {
        return Ok(match cfg.garment {
            GarmentChoice::Cylinder => cylinder_fixture(),
            GarmentChoice::Shirt => shirt_fixture(),
        });
    };
    let (mesh, seams) = load_mesh(
        mesh_path,
        cfg.assets.geo.as_deref(),
        cfg.assets.topo.as_deref(),
        cfg.assets.seams.as_deref(),
    )?;
    let seams = seams.unwrap_or_default();
    let zip_init = match &cfg.assets.zip_init {
        Some(p) => {
            let proj = parse_projection(&read_text(p)?)?;
            if proj.points.len() != mesh.geo.points.len() {
                return Err(Error::Validation("zip_init does not match the mesh's geo points".into()));
            }
            proj.points
        }
        None if seams.pairs.is_empty() => mesh.geo.points.clone(),
        None => place_pieces(&mesh, &rigid_init(&mesh, &seams)?)?,
    };
    Ok(Garment { mesh, seams, zip_init })
}

fn synth(cfg: &ProjectConfig, out: &Path) -> Result<()> {
    let gen = generator(cfg)?;
    let params = init_params(cfg, &gen);
    let hard = gen.hard(&params)?;
    let soft = gen.soft_forward(&params, cfg.attack.tau)?.texture;
    save_png(&Image::from_texture(&hard), &out.join("texture.png"))?;
    save_png(&Image::from_texture(&soft), &out.join("texture_soft.png"))?;
    write_text(&out.join("params.toml"), &to_toml(&params)?)
}

fn zip(cfg: &ProjectConfig, out: &Path) -> Result<()> {
    let g = garment(cfg)?;
    let outcome = zip_projection(&g.mesh, &g.seams, &g.zip_init, &cfg.zip)?;
    log::info!(
        "zipped in {} iterations, final pair distance {:e}",
        outcome.iterations,
        outcome.final_pair_distance
    );
    write_text(&out.join("topo.toml"), &projection_to_toml(&outcome.topo)?)?;
    let rows: Vec<Vec<String>> = outcome
        .trace
        .iter()
        .map(|r| vec![r.step.to_string(), f(r.beta), f(r.max_pair_distance), r.flip_count.to_string()])
        .collect();
    write_csv(&out.join("zip_trace.csv"), &["step", "beta", "max_pair_distance", "flip_count"], &rows)
}

/// Garment with a TopoProj, zipping first when it has none.
fn garment_with_topo(cfg: &ProjectConfig) -> Result<ClothMesh> {
    let g = garment(cfg)?;
    if g.mesh.topo.is_some() {
        return Ok(g.mesh);
    }
    let outcome = zip_projection(&g.mesh, &g.seams, &g.zip_init, &cfg.zip)?;
    let mut mesh = g.mesh;
    mesh.topo = Some(outcome.topo);
    Ok(mesh)
}

fn warp(cfg: &ProjectConfig, out: &Path) -> Result<()> {
    let w = &cfg.warp;
    let mesh = garment_with_topo(cfg)?;
    let camera = framing_camera(&mesh, w.size, w.angle);
    let mut rows = Vec::new();
    for (mode, name) in [(WarpMode::Plain, "plain"), (WarpMode::Naive, "naive"), (WarpMode::Topo, "topo")] {
        let samples = warped_samples(&mesh, &camera, mode, w.shear)?;
        save_png(&samples.checker_image(w.cell), &out.join(format!("warp_{name}.png")))?;
        let c = samples.counts();
        rows.push(vec![
            name.to_string(),
            c.garment_pixels.to_string(),
            c.leaked.to_string(),
            c.misses.to_string(),
            f(c.leak_fraction()),
        ]);
    }
    write_csv(&out.join("leak.csv"), &["mode", "garment_pixels", "leaked", "misses", "leak_fraction"], &rows)
}

fn render(cfg: &ProjectConfig, out: &Path) -> Result<()> {
    let gen = generator(cfg)?;
    let tex = texture(cfg, &gen)?;
    let assets = scene(cfg)?;
    let light = LightSpec::ambient(cfg.render.ambient);
    let intensity = cfg.render.preset.intensity();
    let base = &assets.mannequin.shirt.mesh;
    let topo = base.topo.as_ref().expect("mannequin shirt has a topo projection");
    let mut frames = Vec::new();
    for (k, angle) in ring_angles(cfg.render.ring_size).into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
        let shirt = if intensity.eps_tps > 0.0 {
            tps3d_perturb(base, GRID_3D, &intensity, &mut rng)?.0
        } else {
            base.clone()
        };
        let warp = if intensity.eps_r > 0.0 || intensity.eps_t > 0.0 {
            Some(random_topo_warp(topo, &intensity, &mut rng)?)
        } else {
            None
        };
        let shaded = assets.render(angle, &light, &shirt, warp.as_ref())?;
        let rgb = shaded.apply(&tex.pixels);
        // White backdrop where nothing is drawn.
        let pixels = rgb
            .iter()
            .zip(&shaded.alpha)
            .map(|(c, &a)| c.map(|v| a * v + (1.0 - a)))
            .collect();
        frames.push(Image {
            width: shaded.width,
            height: shaded.height,
            pixels,
        });
    }
    save_png(&contact_sheet(&frames, cfg.render.cols)?, &out.join("contact_sheet.png"))
}

fn read_pairs(path: &Path) -> Result<Vec<ColorPair>> {
    let err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let mut pairs = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(err)?;
        if rec.len() != 6 {
            return Err(Error::Format(format!("{}: row {} needs 6 columns", path.display(), i + 1)));
        }
        let mut v = [0.0; 6];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = rec[k]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("{}: row {}: bad number {:?}", path.display(), i + 1, &rec[k])))?;
        }
        let p = ColorPair {
            digital: [v[0], v[1], v[2]],
            measured: [v[3], v[4], v[5]],
        };
        p.validate()?;
        pairs.push(p);
    }
    Ok(pairs)
}

fn pair_rows(pairs: &[ColorPair]) -> Vec<Vec<String>> {
    pairs
        .iter()
        .map(|p| p.digital.iter().chain(&p.measured).map(|&v| f(v)).collect())
        .collect()
}

const PAIR_HEADER: [&str; 6] = ["R", "G", "B", "R*", "G*", "B*"];

fn calibrate(cfg: &ProjectConfig, out: &Path) -> Result<()> {
    let c = &cfg.calibrate;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs = match &cfg.assets.pairs {
        Some(p) => read_pairs(p)?,
        None => {
            let pairs = c.printer.measure(&make_palette(c.palette_n)?, &mut rng);
            write_csv(&out.join("pairs.csv"), &PAIR_HEADER, &pair_rows(&pairs))?;
            pairs
        }
    };
    let sel = select_degree(&pairs, c.d_max, c.splits, &mut rng)?;
    let model = fit_color_model(&pairs, sel.degree)?;
    log::info!("selected degree {}, training MSE {:e}", sel.degree, mse(&model, &pairs));
    let rows: Vec<Vec<String>> = sel
        .val_mse
        .iter()
        .enumerate()
        .map(|(d, &m)| vec![d.to_string(), f(m)])
        .collect();
    write_csv(&out.join("degree_mse.csv"), &["degree", "val_mse"], &rows)?;
    write_text(&out.join("color_model.toml"), &to_toml(&model)?)
}

fn train(cfg: &ProjectConfig, out: &Path) -> Result<()> {
    let gen = generator(cfg)?;
    let assets = scene(cfg)?;
    let b = &cfg.backgrounds;
    let bgs = background_set(b.surrogate_seed, b.n_surrogate, b.size, b.size);
    let images = surrogate_training_images(&assets, &gen, &bgs, cfg.surrogate.n_person, cfg.seed)?;
    let train_cfg = advcat::detect::SurrogateTrainConfig {
        seed: cfg.seed,
        ..cfg.surrogate.train
    };
    let (model, report) = train_surrogate(&images, SurrogateModel::default_shapes(), &train_cfg)?;
    log::info!("surrogate: {report:?}");
    write_text(&out.join("surrogate.toml"), &to_toml(&model)?)?;
    let rows: Vec<Vec<String>> = model
        .shapes
        .iter()
        .zip(&report.accuracy)
        .map(|(s, &a)| {
            vec![
                s.width.to_string(),
                s.height.to_string(),
                report.positives.to_string(),
                report.negatives.to_string(),
                f(a),
            ]
        })
        .collect();
    write_csv(
        &out.join("surrogate_report.csv"),
        &["anchor_width", "anchor_height", "positives", "negatives", "heldout_accuracy"],
        &rows,
    )
}

fn attack(cfg: &ProjectConfig, out: &Path) -> Result<()> {
    let gen = generator(cfg)?;
    let assets = scene(cfg)?;
    let model = surrogate(cfg)?;
    let colors = color_model(cfg)?;
    let b = &cfg.backgrounds;
    let bgs = background_set(b.train_seed, b.n_train, b.size, b.size);
    let init = match &cfg.assets.params {
        Some(p) => load_params(p, &gen)?,
        None => init_params(cfg, &gen),
    };
    let acfg = AttackConfig {
        seed: cfg.seed,
        ..cfg.attack.clone()
    };
    let ckpt_dir = out.join("checkpoints");
    let outcome = optimize(&acfg, &gen, init, &assets, &model, &bgs, colors.as_ref(), |epoch, params| {
        write_text(&ckpt_dir.join(format!("params_epoch_{epoch:05}.toml")), &to_toml(params)?)
    })?;
    let rows: Vec<Vec<String>> = outcome
        .trace
        .iter()
        .map(|t| vec![t.epoch.to_string(), f(t.mean_conf), f(t.l_con), f(t.loss)])
        .collect();
    write_csv(&out.join("trace.csv"), &["epoch", "mean_conf", "l_con", "loss"], &rows)?;
    let probs = outcome.sampler.probabilities();
    let rows: Vec<Vec<String>> = (0..probs.len())
        .map(|k| vec![f(outcome.sampler.angles[k]), f(outcome.sampler.scores[k]), f(probs[k])])
        .collect();
    write_csv(&out.join("angle_scores.csv"), &["angle", "score", "probability"], &rows)?;
    write_text(&out.join("params.toml"), &to_toml(&outcome.params)?)?;
    save_png(&Image::from_texture(&gen.hard(&outcome.params)?), &out.join("texture.png"))
}

fn eval(cfg: &ProjectConfig, out: &Path) -> Result<()> {
    let gen = generator(cfg)?;
    let tex = texture(cfg, &gen)?;
    let assets = scene(cfg)?;
    let model = surrogate(cfg)?;
    let colors = color_model(cfg)?;
    let b = &cfg.backgrounds;
    let bgs = background_set(b.eval_seed, b.n_eval, b.size, b.size);
    let ecfg = EvalConfig {
        seed: cfg.seed,
        ..cfg.eval
    };
    let report = evaluate(&assets, &model, &tex.pixels, colors.as_ref(), &bgs, &ecfg)?;
    let mut rows = Vec::new();
    for &t in &TAU_IOUS {
        for (angle, asr, conf) in report.per_angle(t)? {
            rows.push(vec![f(angle), f(t), f(asr), f(conf)]);
        }
        rows.push(vec!["all".into(), f(t), f(report.asr(t)?), f(report.mean_conf())]);
    }
    write_csv(&out.join("asr.csv"), &["angle", "tau_iou", "asr", "mean_conf"], &rows)?;
    let rows: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| {
            let mut v = vec![f(r.angle), r.repeat.to_string(), r.background.to_string(), f(r.selected_conf)];
            v.extend(r.max_conf.iter().map(|&c| f(c)));
            v
        })
        .collect();
    write_csv(
        &out.join("detections.csv"),
        &[
            "angle",
            "repeat",
            "background",
            "selected_conf",
            "max_conf_iou_0.01",
            "max_conf_iou_0.1",
            "max_conf_iou_0.3",
            "max_conf_iou_0.5",
        ],
        &rows,
    )
}

fn gradcheck(cfg: &ProjectConfig, out: &Path) -> Result<()> {
    let g = &cfg.gradcheck;
    let gen = generator(cfg)?;
    let tex = texture_grad_check(&gen, g.tau, g.n_params, cfg.seed)?;
    let e2e = end_to_end_grad_check(g.n_params, cfg.seed)?;
    let checks = [("texture", tex, g.texture_tolerance), ("end_to_end", e2e, g.end_to_end_tolerance)];
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|(n, e, t)| vec![n.to_string(), f(*e), f(*t), (e < t).to_string()])
        .collect();
    write_csv(&out.join("gradcheck.csv"), &["check", "max_rel_error", "tolerance", "pass"], &rows)?;
    for (n, e, t) in checks {
        if !(e < t) {
            return Err(Error::Numeric(format!("{n} gradient check: relative error {e:e} >= {t:e}")));
        }
    }
    Ok(())
}
