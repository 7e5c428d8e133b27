//! One `--flag` per training config key, layered over an optional config file.

use std::path::PathBuf;

use clap::{value_parser, Arg, ArgMatches, Args, Command, FromArgMatches};
use texgs::train::TrainConfig;

const HEADING: &str = "Config (flag > --config file > default)";

#[derive(Debug, Clone, Default)]
pub struct ConfigFlags {
    pub file: Option<PathBuf>,
    pub values: Vec<(&'static str, String)>,
}

impl ConfigFlags {
    pub fn resolve(&self) -> texgs::Result<TrainConfig> {
        match &self.file {
            Some(path) => texgs::io::parse_config_with_overrides(path, &self.values),
            None => TrainConfig::parse_with_overrides("", &self.values),
        }
    }
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(matches: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = ConfigFlags { file: matches.get_one::<PathBuf>("config").cloned(), values: Vec::new() };
        for key in TrainConfig::KEYS {
            if let Some(v) = matches.get_one::<String>(key) {
                out.values.push((key, v.clone()));
            }
        }
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, matches: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(matches)?;
        Ok(())
    }
}

impl Args for ConfigFlags {
    fn augment_args(cmd: Command) -> Command {
        let defaults = TrainConfig::default();
        let mut cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("flat `key = value` config file")
                .help_heading(HEADING),
        );
        for key in TrainConfig::KEYS {
            let default = defaults.get(key).unwrap_or_default();
            cmd = cmd.arg(
                Arg::new(*key)
                    .long(flag_name(key))
                    .alias(*key)
                    .value_name("VALUE")
                    .allow_negative_numbers(true)
                    .help(format!("{} [default: {default}]", TrainConfig::describe(key)))
                    .help_heading(HEADING),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}
