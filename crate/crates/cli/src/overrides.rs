//! Command-line overrides of configuration keys.

use clap::Args;
use nvodmr::io::ExperimentConfig;
use serde_json::Value;

use crate::pipeline::CliError;

macro_rules! override_flags {
    ($($field:ident : $ty:ty => $path:literal),* $(,)?) => {
        #[derive(Args, Debug, Clone, Default)]
        pub struct Overrides {
            $(
                #[arg(long, global = true, help = concat!("Overrides ", $path))]
                pub $field: Option<$ty>,
            )*
            /// Any config key by dotted path, e.g. --set scan.tile.pixels=256.
            #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
            pub set: Vec<String>,
        }

        impl Overrides {
            fn flags(&self) -> Vec<(&'static str, Value)> {
                let mut v = Vec::new();
                $(
                    if let Some(x) = &self.$field {
                        v.push(($path, serde_json::json!(x)));
                    }
                )*
                v
            }
        }
    };
}

override_flags! {
    d_mhz: f64 => "hamiltonian.d_mhz",
    e_mhz: f64 => "hamiltonian.e_mhz",
    gamma_mhz_per_mt: f64 => "hamiltonian.gamma_mhz_per_mt",
    bx_mt: f64 => "field.bx_mt",
    by_mt: f64 => "field.by_mt",
    bz_mt: f64 => "field.bz_mt",
    f_start_mhz: f64 => "sweep.f_start_mhz",
    f_stop_mhz: f64 => "sweep.f_stop_mhz",
    n_points: usize => "sweep.n_points",
    duration_s: f64 => "sweep.duration_s",
    order: usize => "lockin.order",
    tau_s: f64 => "lockin.tau_s",
    mode: String => "lockin.mode",
    ref_freq_hz: f64 => "lockin.ref_freq_hz",
    sample_rate_hz: f64 => "lockin.sample_rate_hz",
    fwhm_mhz: f64 => "lineshape.fwhm_mhz",
    total_contrast: f64 => "lineshape.total_contrast",
    baseline: f64 => "lineshape.baseline",
    sigma: f64 => "noise.sigma",
    merge_tol_mhz: f64 => "pattern.merge_tol_mhz",
    inconsistency_mhz: f64 => "magnetometry.inconsistency_mhz",
    power: f64 => "scan.power",
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Input(format!("cannot set '{path}': '{}' is not a section", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert((*key).to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*key)
            .ok_or_else(|| CliError::Input(format!("cannot set '{path}': no section '{}'", keys[..=i].join("."))))?;
    }
    Err(CliError::Input(format!("empty key in --set '{path}'")))
}

impl Overrides {
    /// Applies flags and `--set` pairs on top of `cfg`, then re-validates.
    pub fn apply(&self, cfg: ExperimentConfig, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
        let mut pairs = self.flags();
        if let Some(s) = seed {
            pairs.push(("noise.seed", serde_json::json!(s)));
        }
        if pairs.is_empty() && self.set.is_empty() {
            return Ok(cfg);
        }
        let mut root = serde_json::to_value(&cfg).expect("config serializes");
        for (path, value) in pairs {
            set_path(&mut root, path, value)?;
        }
        for kv in &self.set {
            let (path, raw) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut root, path.trim(), value)?;
        }
        let cfg = ExperimentConfig::from_json(&root.to_string())?;
        Ok(cfg)
    }
}
