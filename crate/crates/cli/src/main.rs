mod args;
mod commands;
mod config_flags;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use args::{parse_pair, parse_vec3, parse_vec4, LightArgs, Mode, SceneIo, SeedArg, TargetArgs};
use config_flags::ConfigFlags;

#[derive(Debug, Parser)]
#[command(name = "texgs", version, about = "Textured surfel splatting: fit, render, edit, stylize, segment and serve scenes")]
struct Cli {
    /// worker threads (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a textured scene to a multi-view dataset.
    Fit {
        /// dataset directory holding cameras.json and images/
        #[arg(long)]
        dataset: PathBuf,
        /// output scene file
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Render a scene from a camera sweep or a cameras manifest.
    Render {
        /// scene file
        #[arg(long)]
        scene: PathBuf,
        /// `icosphere:N`, a cameras.json file or a dataset directory
        #[arg(long, default_value = "icosphere:12")]
        views: String,
        /// output directory for `<view>.png`
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Shaded)]
        mode: Mode,
        /// dataset directory with reference images named like the views
        #[arg(long)]
        reference: Option<PathBuf>,
        /// sweep radius
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        /// sweep center
        #[arg(long, value_name = "X,Y,Z", value_parser = parse_vec3, default_value = "0,0,0", allow_negative_numbers = true)]
        center: [f64; 3],
        /// sweep image width
        #[arg(long, default_value_t = 256)]
        width: usize,
        /// sweep image height
        #[arg(long, default_value_t = 256)]
        height: usize,
        /// sweep vertical field of view in degrees
        #[arg(long, default_value_t = 40.0)]
        fov: f64,
        /// write 16-bit PNGs for shaded and texture renders
        #[arg(long)]
        sixteen_bit: bool,
        #[command(flatten)]
        light: LightArgs,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Apply real-time edits and store them in the scene file.
    Edit {
        #[command(flatten)]
        io: SceneIo,
        #[command(flatten)]
        target: TargetArgs,
        /// opacity factor
        #[arg(long, allow_negative_numbers = true)]
        opacity: Option<f64>,
        /// ambient, diffuse, specular and shininess factors
        #[arg(long, value_name = "KA,KD,KS,BETA", value_parser = parse_vec4, allow_negative_numbers = true)]
        lighting: Option<[f64; 4]>,
        /// palette color, linear RGB
        #[arg(long, value_name = "R,G,B", value_parser = parse_vec3, allow_negative_numbers = true)]
        palette: Option<[f64; 3]>,
        /// light direction as azimuth and polar angle in degrees
        #[arg(long, value_name = "AZIMUTH,POLAR", value_parser = parse_pair, allow_negative_numbers = true)]
        light_angles: Option<[f64; 2]>,
        /// write absolute values instead of multiplying the stored factors
        #[arg(long)]
        absolute: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Restyle textures after a style image.
    StylizeImage {
        #[command(flatten)]
        io: SceneIo,
        #[command(flatten)]
        target: TargetArgs,
        /// style image
        #[arg(long)]
        style: PathBuf,
        /// dataset directory supplying the cameras
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Fit textures to six externally edited views.
    StylizeText {
        #[command(flatten)]
        io: SceneIo,
        #[command(flatten)]
        target: TargetArgs,
        /// dataset directory with the six edited views
        #[arg(long)]
        views: PathBuf,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Lift per-view masks onto primitives and write a label table.
    Segment {
        /// scene file
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
        /// dataset directory supplying the cameras
        #[arg(long)]
        dataset: PathBuf,
        /// mask directory; repeat for further labels (k-th directory = label k)
        #[arg(long, required = true)]
        masks: Vec<PathBuf>,
        /// output label table
        #[arg(long)]
        out: PathBuf,
        /// also write the scene split into one entry per label
        #[arg(long)]
        split: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Combine scene files into one composition.
    Compose {
        /// scene files, in order
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// output scene file
        #[arg(long)]
        out: PathBuf,
        /// label table splitting the first input's entry `--target`
        #[arg(long)]
        labels: Option<PathBuf>,
        /// entry the label table applies to
        #[arg(long, default_value = "0")]
        target: String,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Write a cameras manifest for a sweep around a point.
    Cameras {
        /// number of cameras (12, 42, 162, 642 give icosphere vertices)
        #[arg(long, default_value_t = 12)]
        count: usize,
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        #[arg(long, value_name = "X,Y,Z", value_parser = parse_vec3, default_value = "0,0,0", allow_negative_numbers = true)]
        center: [f64; 3],
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        /// vertical field of view in degrees
        #[arg(long, default_value_t = 40.0)]
        fov: f64,
        /// output directory for cameras.json
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        light: LightArgs,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Serve scenes to the interactive viewer over websockets.
    Serve {
        /// scene files to load, composed in order
        #[arg(long)]
        scene: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[command(flatten)]
        light: LightArgs,
        #[command(flatten)]
        config: ConfigFlags,
    },
}

/// Process exit status per error class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum Exit {
    Failure = 1,
    Usage = 2,
    InvalidConfig = 3,
    NotFound = 4,
    BadInput = 5,
    Numerical = 6,
    UnknownTarget = 7,
    Io = 8,
}

fn classify(err: &anyhow::Error) -> Exit {
    use texgs::Error as E;
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<texgs::Error>()) else {
        if err.chain().any(|c| c.downcast_ref::<commands::UsageError>().is_some()) {
            return Exit::Usage;
        }
        return Exit::Failure;
    };
    match e {
        E::InvalidConfig(_) | E::UnknownConfigKey(_) | E::InvalidParameter(_) => Exit::InvalidConfig,
        E::FileNotFound { .. } => Exit::NotFound,
        E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => Exit::NotFound,
        E::Io { .. } => Exit::Io,
        E::Malformed { .. }
        | E::EmptyDataset
        | E::DimensionMismatch(_)
        | E::UnreadableImage { .. }
        | E::Format(_)
        | E::NonBinaryMask { .. } => Exit::BadInput,
        E::NonFinite(_) | E::Contract(_) => Exit::Numerical,
        E::UnknownTarget(_) => Exit::UnknownTarget,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("cannot size the thread pool: {e}");
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e) as u8)
        }
    }
}
