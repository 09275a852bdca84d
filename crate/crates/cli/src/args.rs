use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "qlattice", version, about = "Fixed-frequency transmon lattice simulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Table,
    Structured,
}

#[derive(Debug, Args, Serialize)]
pub struct Global {
    /// Device file, or `device_4x4` for the bundled device.
    #[arg(long, global = true, default_value = qlattice::io::BUNDLED_DEVICE_NAME)]
    pub device: String,
    /// Master seed; required by every command that draws random numbers.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the JSON result envelope here.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write tabular data as CSV here.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    /// Write an SVG plot here.
    #[arg(long, global = true)]
    pub plot: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "table")]
    pub format: Format,
    /// Transmon levels kept per site.
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    /// Readout shots; 0 or absent records exact probabilities.
    #[arg(long, global = true)]
    pub shots: Option<u32>,
    /// Symmetric readout assignment error.
    #[arg(long, global = true, default_value_t = 0.0)]
    pub assignment_error: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dressed spectrum of a qubit subset.
    Spectrum(SpectrumArgs),
    /// Static ZZ of one pair or all coupled pairs.
    Zz(ZzArgs),
    /// One time-domain protocol (T1, Ramsey, echo, swap chevron).
    Dynamics(DynamicsArgs),
    /// AC-Stark Ramsey sweep toward another qubit with a coupling fit.
    Sweep(SweepArgs),
    /// Drive-induced ZZ: prediction, pulse-width tomography, phase sweep.
    Sizzle(SizzleArgs),
    /// ZZ-phase gate calibration.
    CalibrateCz(CalibrateArgs),
    /// Randomized benchmarking.
    Rb(RbArgs),
    /// State preparation and simulated state tomography.
    Tomography(TomographyArgs),
    /// Fit a model to two columns of a CSV file.
    Fit(FitArgs),
    /// Column statistics with published-value comparison.
    Stats(StatsArgs),
    /// Device overview: statistics, straddling pairs, ZZ of every coupling.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrum(_) => "spectrum",
            Command::Zz(_) => "zz",
            Command::Dynamics(_) => "dynamics",
            Command::Sweep(_) => "sweep",
            Command::Sizzle(_) => "sizzle",
            Command::CalibrateCz(_) => "calibrate-cz",
            Command::Rb(_) => "rb",
            Command::Tomography(_) => "tomography",
            Command::Fit(_) => "fit",
            Command::Stats(_) => "stats",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SpectrumArgs {
    /// Comma-separated qubit labels.
    #[arg(long, value_delimiter = ',', required = true)]
    pub qubits: Vec<String>,
    /// Number of lowest levels to print.
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Include long-range couplings.
    #[arg(long)]
    pub long_range: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ZzArgs {
    /// Pair as `A,B`; omit for every coupled pair.
    #[arg(long, value_delimiter = ',')]
    pub pair: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    T1,
    Ramsey,
    Echo,
    Swap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    None,
    Device,
}

#[derive(Debug, Args, Serialize)]
pub struct DynamicsArgs {
    #[arg(long, value_enum)]
    pub protocol: Protocol,
    #[arg(long)]
    pub qubit: String,
    /// Partner qubit of the swap protocol.
    #[arg(long)]
    pub partner: Option<String>,
    /// Delays or swap durations in µs: `a,b,c` or `start:stop:count`.
    #[arg(long, default_value = "0:100:51")]
    pub times: String,
    /// Ramsey software detuning in MHz.
    #[arg(long, default_value_t = 0.1)]
    pub detuning: f64,
    /// Swap offsets from the partner frequency in MHz.
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pub offsets: String,
    #[arg(long, value_enum, default_value = "device")]
    pub noise: NoiseModel,
    /// Quasi-static frequency jitter σ_f in kHz.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Qubit whose frequency is tracked.
    #[arg(long)]
    pub measured: String,
    /// Qubit pushed by the Stark tone.
    #[arg(long)]
    pub shifted: String,
    /// Target `ω_measured − ω_shifted` values in MHz, on the side the tone can
    /// reach; default is ten points from 0.85 to 0.25 of the natural detuning.
    #[arg(long, allow_hyphen_values = true)]
    pub detunings: Option<String>,
    #[arg(long, default_value_t = 300.0)]
    pub tone_detuning: f64,
    #[arg(long, value_enum, default_value = "none")]
    pub noise: NoiseModel,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SizzleArgs {
    #[arg(long)]
    pub control: String,
    #[arg(long)]
    pub target: String,
    /// Shared drive frequency in MHz.
    #[arg(long)]
    pub drive_freq: f64,
    /// Target Rabi amplitude in MHz.
    #[arg(long)]
    pub amplitude: f64,
    /// Control/target amplitude ratio; default is the Rabi-amplitude ratio.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub phase_diff: f64,
    /// Tone widths in µs for pulse-width tomography.
    #[arg(long, default_value = "0:2:11")]
    pub widths: String,
    /// Relative phases (rad) for a phase sweep.
    #[arg(long, allow_hyphen_values = true)]
    pub phases: Option<String>,
    #[arg(long, default_value_t = 20.0)]
    pub rise_ns: f64,
    #[arg(long, value_enum, default_value = "none")]
    pub noise: NoiseModel,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Calibrate from a known rate (kHz) instead of simulating the drive.
    #[arg(long, conflicts_with_all = ["control", "target", "drive_freq", "amplitude"])]
    pub rate: Option<f64>,
    #[arg(long, required_unless_present = "rate")]
    pub control: Option<String>,
    #[arg(long, required_unless_present = "rate")]
    pub target: Option<String>,
    #[arg(long, required_unless_present = "rate")]
    pub drive_freq: Option<f64>,
    #[arg(long, required_unless_present = "rate")]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Conditional phase per gate in rad.
    #[arg(long, default_value_t = qlattice::sizzle::CZ_TARGET_PHASE, conflicts_with = "quarter_phase")]
    pub target_phase: f64,
    /// Calibrate to a π/4 conditional phase per gate.
    #[arg(long)]
    pub quarter_phase: bool,
    #[arg(long, default_value_t = 10)]
    pub gates: usize,
    #[arg(long, default_value = "0:2:11")]
    pub widths: String,
    #[arg(long, default_value_t = 20.0)]
    pub rise_ns: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct RbArgs {
    /// One to four qubits; several run simultaneously with static ZZ.
    #[arg(long, value_delimiter = ',', required = true)]
    pub qubits: Vec<String>,
    /// Clifford lengths; default depends on the mode.
    #[arg(long)]
    pub lengths: Option<String>,
    #[arg(long, default_value_t = 16)]
    pub sequences: usize,
    /// Inject a depolarizing error per Clifford instead of device coherence.
    #[arg(long)]
    pub epc: Option<f64>,
    /// Coherent over-rotation per pulse in rad.
    #[arg(long, default_value_t = 0.0)]
    pub over_rotation: f64,
    /// Physical gate time in µs.
    #[arg(long, default_value_t = qlattice::rb::DEFAULT_GATE_TIME)]
    pub gate_time: f64,
    /// Two-qubit RB interleaving CZ on the two given qubits.
    #[arg(long)]
    pub interleaved_cz: bool,
    /// Depolarizing CZ infidelity; otherwise a Lindblad CZ of `--cz-time`.
    #[arg(long)]
    pub cz_infidelity: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub cz_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    Bell,
    Ghz,
}

#[derive(Debug, Args, Serialize)]
pub struct TomographyArgs {
    #[arg(long, value_enum)]
    pub state: StateKind,
    /// Two labels for Bell, three for GHZ.
    #[arg(long, value_delimiter = ',', required = true)]
    pub qubits: Vec<String>,
    /// ZZ rate (kHz) of an ideal calibrated CZ.
    #[arg(long, conflicts_with = "gate_time")]
    pub rate: Option<f64>,
    /// Duration (µs) of a Lindblad CZ using device coherence.
    #[arg(long)]
    pub gate_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    Exp,
    Cos,
    Anticrossing,
    Rb,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub model: FitModel,
    /// Header of the x column.
    #[arg(long)]
    pub x: String,
    /// Header of the y column.
    #[arg(long)]
    pub y: String,
    /// RB asymptote 1/2^n.
    #[arg(long, default_value_t = 0.5)]
    pub asymptote: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    /// Column name; omit for every column.
    #[arg(long)]
    pub column: Option<String>,
}
