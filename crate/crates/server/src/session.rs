use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use texgs::camera::CameraView;
use texgs::dataset::MultiViewDataset;
use texgs::edit::features::ToyExtractor;
use texgs::edit::stylize::{stylize_image, stylize_text, ImageStyleOptions, TextStyleOptions};
use texgs::edit::PseEdit;
use texgs::io;
use texgs::math::Vec3;
use texgs::render::{render, RenderOptions};
use texgs::scene::{BasicSceneModel, ComposedScene, LightConfig};
use texgs::segment::{accumulate_votes, split_into_composed, vote_labels, VoteParams};
use texgs::train::TrainConfig;

use crate::frame::encode_rgba8;
use crate::protocol::{ClientMessage, EditOp, JobOp, SceneInfo, SceneOp, ServerMessage, WireMode};
use crate::ServiceError;

/// One websocket message.
#[derive(Debug, Clone, PartialEq)]
pub enum Outgoing {
    Text(String),
    Binary(Vec<u8>),
}

impl Outgoing {
    fn message(m: &ServerMessage) -> Self {
        Outgoing::Text(m.to_json())
    }
}

struct Shared {
    scene: ComposedScene,
    revision: u64,
}

/// State shared by every connection.
pub struct Hub {
    shared: RwLock<Shared>,
    job: Mutex<Option<u64>>,
    next_job: AtomicU64,
    next_session: AtomicU64,
    subscribers: Mutex<Vec<(u64, Sender<Outgoing>)>>,
    pub light: LightConfig,
    pub background: Vec3,
    /// Defaults for job parameters.
    pub config: TrainConfig,
}

impl Hub {
    pub fn new(scene: ComposedScene, light: LightConfig, background: Vec3) -> Arc<Hub> {
        Self::with_config(scene, light, background, TrainConfig::default())
    }

    pub fn with_config(scene: ComposedScene, light: LightConfig, background: Vec3, config: TrainConfig) -> Arc<Hub> {
        Arc::new(Hub {
            shared: RwLock::new(Shared { scene, revision: 0 }),
            job: Mutex::new(None),
            next_job: AtomicU64::new(1),
            next_session: AtomicU64::new(1),
            subscribers: Mutex::new(Vec::new()),
            light,
            background,
            config,
        })
    }

    pub fn revision(&self) -> u64 {
        self.shared.read().unwrap().revision
    }

    /// Current composition and its revision.
    pub fn snapshot(&self) -> (ComposedScene, u64) {
        let s = self.shared.read().unwrap();
        (s.scene.clone(), s.revision)
    }

    pub fn running_job(&self) -> Option<u64> {
        *self.job.lock().unwrap()
    }

    fn ensure_idle(&self) -> Result<(), ServiceError> {
        match self.running_job() {
            Some(_) => Err(ServiceError::Busy),
            None => Ok(()),
        }
    }

    /// Applies `f` to the composition and bumps the revision. Rejected while a job runs.
    fn mutate(&self, f: impl FnOnce(&mut ComposedScene) -> Result<(), ServiceError>) -> Result<u64, ServiceError> {
        let mut s = self.shared.write().unwrap();
        self.ensure_idle()?;
        let mut next = s.scene.clone();
        f(&mut next)?;
        s.scene = next;
        s.revision += 1;
        Ok(s.revision)
    }

    fn broadcast(&self, except: Option<u64>, message: &ServerMessage) {
        let out = Outgoing::message(message);
        let mut subs = self.subscribers.lock().unwrap();
        subs.retain(|(id, tx)| Some(*id) == except || tx.send(out.clone()).is_ok());
    }

    fn send_to(&self, session: u64, message: &ServerMessage) {
        let subs = self.subscribers.lock().unwrap();
        if let Some((_, tx)) = subs.iter().find(|(id, _)| *id == session) {
            let _ = tx.send(Outgoing::message(message));
        }
    }

    fn listing(&self) -> ServerMessage {
        let s = self.shared.read().unwrap();
        ServerMessage::State {
            revision: s.revision,
            scenes: s
                .scene
                .entries
                .iter()
                .enumerate()
                .map(|(index, e)| SceneInfo {
                    index,
                    name: e.name.clone(),
                    segment: e.segment,
                    visible: e.visible,
                    primitives: e.scene.len(),
                    edit: e.scene.edit.clone(),
                })
                .collect(),
            job: self.running_job(),
        }
    }
}

/// Entries addressed by a scene id: a position addresses one entry, a name
/// every entry (segment) carrying it. A segment narrows to one entry.
fn targets(scene: &ComposedScene, id: &str, segment: Option<u32>) -> Result<Vec<usize>, ServiceError> {
    if segment.is_some() || id.parse::<usize>().is_ok() {
        return Ok(vec![scene.find(id, segment)?]);
    }
    let found: Vec<usize> = scene.entries.iter().enumerate().filter(|(_, e)| e.name == id).map(|(i, _)| i).collect();
    if found.is_empty() {
        return Err(texgs::Error::UnknownTarget(id.to_string()).into());
    }
    Ok(found)
}

fn apply_edit_op(scene: &mut ComposedScene, id: &str, segment: Option<u32>, op: &EditOp) -> Result<(), ServiceError> {
    let pse = op.to_pse();
    pse.validate()?;
    for i in targets(scene, id, segment)? {
        let entry = Arc::make_mut(&mut scene.entries[i].scene);
        if op.is_absolute() {
            match pse {
                PseEdit::ScaleOpacity { factor } => entry.edit.opacity = factor,
                PseEdit::ScaleLighting { k_a, k_d, k_s, beta } => {
                    (entry.edit.k_a, entry.edit.k_d, entry.edit.k_s, entry.edit.beta) = (k_a, k_d, k_s, beta)
                }
                _ => unreachable!("only scale edits can be absolute"),
            }
        } else {
            entry.edit = pse.applied_to(&entry.edit);
        }
    }
    Ok(())
}

/// The per-connection half of the service.
pub struct Session {
    hub: Arc<Hub>,
    id: u64,
    notifications: Receiver<Outgoing>,
    /// Last rendered camera and mode.
    pub camera: Option<CameraView>,
    pub mode: WireMode,
    last_revision: u64,
}

impl Session {
    pub fn new(hub: Arc<Hub>) -> Session {
        let id = hub.next_session.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = channel();
        hub.subscribers.lock().unwrap().push((id, tx));
        Session { hub, id, notifications: rx, camera: None, mode: WireMode::Shaded, last_revision: 0 }
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Greeting sent when a client connects.
    pub fn hello(&mut self) -> Vec<Outgoing> {
        vec![self.text(self.hub.listing())]
    }

    fn text(&mut self, m: ServerMessage) -> Outgoing {
        if let ServerMessage::Frame { revision, .. }
        | ServerMessage::Ack { revision }
        | ServerMessage::State { revision, .. }
        | ServerMessage::StateChanged { revision }
        | ServerMessage::JobDone { revision, .. } = m
        {
            self.last_revision = self.last_revision.max(revision);
        }
        Outgoing::message(&m)
    }

    /// Replies to one text message, in order.
    pub fn handle(&mut self, text: &str) -> Vec<Outgoing> {
        let result = serde_json::from_str::<ClientMessage>(text)
            .map_err(|e| ServiceError::Malformed(e.to_string()))
            .and_then(|msg| self.dispatch(msg));
        match result {
            Ok(out) => out,
            Err(e) => {
                log::debug!("request failed: {e}");
                vec![Outgoing::message(&ServerMessage::from(&e))]
            }
        }
    }

    /// Pending notifications (other clients' edits, finished jobs).
    pub fn poll_notifications(&mut self) -> Vec<Outgoing> {
        let mut out = Vec::new();
        while let Ok(m) = self.notifications.try_recv() {
            out.push(m);
        }
        self.note_revisions(&out);
        out
    }

    /// Waits up to `timeout` for one notification.
    pub fn wait_notification(&mut self, timeout: Duration) -> Option<Outgoing> {
        match self.notifications.recv_timeout(timeout) {
            Ok(m) => {
                self.note_revisions(std::slice::from_ref(&m));
                Some(m)
            }
            Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => None,
        }
    }

    fn note_revisions(&mut self, out: &[Outgoing]) {
        for m in out {
            if let Outgoing::Text(t) = m {
                if let Ok(ServerMessage::StateChanged { revision } | ServerMessage::JobDone { revision, .. }) =
                    serde_json::from_str(t)
                {
                    self.last_revision = self.last_revision.max(revision);
                }
            }
        }
    }

    fn dispatch(&mut self, msg: ClientMessage) -> Result<Vec<Outgoing>, ServiceError> {
        match msg {
            ClientMessage::RenderRequest { camera, mode } => {
                let camera = camera.to_camera()?;
                let (scene, revision) = self.hub.snapshot();
                // a snapshot never predates what this connection has already seen
                debug_assert!(revision >= self.last_revision);
                let options =
                    RenderOptions { mode: mode.render_mode(), light: self.hub.light.clone(), background: self.hub.background };
                let targets = render(&scene, &camera, &options)?;
                let pixels = encode_rgba8(&targets, options.mode);
                self.camera = Some(camera.clone());
                self.mode = mode;
                let header = self.text(ServerMessage::Frame {
                    revision,
                    width: camera.width,
                    height: camera.height,
                    encoding: "rgba8".into(),
                });
                Ok(vec![header, Outgoing::Binary(pixels)])
            }
            ClientMessage::Edit { scene, segment, op } => {
                let revision = self.hub.mutate(|c| apply_edit_op(c, &scene, segment, &op))?;
                self.acked(revision)
            }
            ClientMessage::SceneOp { op } => self.scene_op(op),
            ClientMessage::Job { op } => self.start_job(op),
            ClientMessage::List => {
                let listing = self.hub.listing();
                Ok(vec![self.text(listing)])
            }
        }
    }

    fn acked(&mut self, revision: u64) -> Result<Vec<Outgoing>, ServiceError> {
        self.hub.broadcast(Some(self.id), &ServerMessage::StateChanged { revision });
        Ok(vec![self.text(ServerMessage::Ack { revision })])
    }

    fn scene_op(&mut self, op: SceneOp) -> Result<Vec<Outgoing>, ServiceError> {
        let revision = match op {
            SceneOp::Save { path } => {
                let (scene, revision) = self.hub.snapshot();
                io::save_scene(&scene, &path)?;
                return Ok(vec![self.text(ServerMessage::Ack { revision })]);
            }
            SceneOp::Load { path } => {
                let loaded = io::load_scene(&path)?;
                self.hub.mutate(|c| {
                    *c = loaded;
                    Ok(())
                })?
            }
            SceneOp::Compose { paths } => {
                let mut added = Vec::new();
                for p in &paths {
                    added.extend(io::load_scene(p)?.entries);
                }
                self.hub.mutate(|c| {
                    c.append(ComposedScene { entries: added });
                    Ok(())
                })?
            }
            SceneOp::ToggleVisibility { scene, segment, visible } => self.hub.mutate(|c| {
                for i in targets(c, &scene, segment)? {
                    let e = &mut c.entries[i];
                    e.visible = visible.unwrap_or(!e.visible);
                }
                Ok(())
            })?,
            SceneOp::ApplyLabels { scene, path } => self.hub.mutate(|c| {
                let i = c.find(&scene, None)?;
                let entry = &c.entries[i];
                let labels = io::load_labels(&path, entry.scene.len())?;
                let parts = split_into_composed(&entry.name, &entry.scene, &labels)?;
                c.entries.splice(i..=i, parts.entries);
                Ok(())
            })?,
        };
        self.acked(revision)
    }

    fn start_job(&mut self, op: JobOp) -> Result<Vec<Outgoing>, ServiceError> {
        let scene_id = match &op {
            JobOp::StylizeImage { scene, .. } | JobOp::StylizeText { scene, .. } | JobOp::Segment { scene, .. } => {
                scene.clone()
            }
        };
        let (index, source, name, job) = {
            let s = self.hub.shared.write().unwrap();
            let mut slot = self.hub.job.lock().unwrap();
            if slot.is_some() {
                return Err(ServiceError::Busy);
            }
            let index = s.scene.find(&scene_id, None)?;
            let entry = &s.scene.entries[index];
            let id = self.hub.next_job.fetch_add(1, Ordering::Relaxed);
            *slot = Some(id);
            (index, entry.scene.as_ref().clone(), entry.name.clone(), id)
        };
        let hub = Arc::clone(&self.hub);
        let owner = self.id;
        std::thread::spawn(move || {
            let outcome = run_job_low_priority(&hub, &op, source, &name);
            let message = {
                let mut s = hub.shared.write().unwrap();
                let result = outcome.and_then(|replacement| {
                    // edits are refused while the job runs, so the entry is still in place
                    s.scene.entries.splice(index..=index, replacement.entries);
                    s.revision += 1;
                    Ok(s.revision)
                });
                *hub.job.lock().unwrap() = None;
                match result {
                    Ok(revision) => ServerMessage::JobDone { job, revision },
                    Err(e) => ServerMessage::JobFailed { job, message: e.to_string() },
                }
            };
            if let ServerMessage::JobDone { revision, .. } = message {
                hub.broadcast(Some(owner), &ServerMessage::StateChanged { revision });
            }
            hub.send_to(owner, &message);
        });
        Ok(vec![self.text(ServerMessage::JobStarted { job })])
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.hub.subscribers.lock().unwrap().retain(|(id, _)| *id != self.id);
    }
}

#[cfg(target_os = "linux")]
fn lower_thread_priority() {
    // SAFETY: plain syscalls on the calling thread
    unsafe {
        let tid = libc::syscall(libc::SYS_gettid) as libc::id_t;
        libc::setpriority(libc::PRIO_PROCESS, tid, 19);
    }
}

#[cfg(not(target_os = "linux"))]
fn lower_thread_priority() {}

/// Runs a job on a dedicated low-priority pool so interactive renders on the
/// global pool keep their latency.
fn run_job_low_priority(hub: &Hub, op: &JobOp, source: BasicSceneModel, name: &str) -> Result<ComposedScene, ServiceError> {
    lower_thread_priority();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .start_handler(|_| lower_thread_priority())
        .build()
        .map_err(|e| ServiceError::Invalid(format!("cannot start job workers: {e}")))?;
    pool.install(|| run_job(hub, op, source, name))
}

fn run_job(hub: &Hub, op: &JobOp, source: BasicSceneModel, name: &str) -> Result<ComposedScene, ServiceError> {
    let config = &hub.config;
    let single = |scene: BasicSceneModel, segment| ComposedScene {
        entries: vec![texgs::scene::SceneEntry { name: name.to_string(), segment, visible: true, scene: Arc::new(scene) }],
    };
    match op {
        JobOp::StylizeImage { style, dataset, lambda_style, iterations, seed, .. } => {
            let mut options = ImageStyleOptions::from_config(config);
            if let Some(l) = lambda_style {
                options.lambda_style = *l;
            }
            if let Some(i) = iterations {
                options.iterations = *i;
            }
            if let Some(s) = seed {
                options.seed = *s;
            }
            let style = io::load_png(style)?;
            let style = texgs::train::loss::composite_over(&style, &hub.background);
            let views = io::load_dataset(dataset)?;
            let extractor = ToyExtractor::new(options.seed);
            let out = stylize_image(&source, &style, &extractor, &views, &options, &mut |_| {})?;
            Ok(single(out, None))
        }
        JobOp::StylizeText { views, iterations, .. } => {
            let mut options = TextStyleOptions::from_config(config);
            if let Some(i) = iterations {
                options.iterations = *i;
            }
            let views: MultiViewDataset = io::load_dataset(views)?;
            let out = stylize_text(&source, &views, &options, &mut |_| {})?;
            Ok(single(out, None))
        }
        JobOp::Segment { dataset, masks, threshold, min_view_fraction, .. } => {
            let dataset = io::load_dataset(dataset)?;
            let masks = io::load_masks(masks, &dataset)?;
            let params = VoteParams {
                threshold_ratio: threshold.unwrap_or(config.segment_threshold),
                min_view_fraction: min_view_fraction.unwrap_or(config.segment_min_view_fraction),
            };
            let labels = vote_labels(&accumulate_votes(&source, &masks)?, &params);
            Ok(split_into_composed(name, &source, &labels)?)
        }
    }
}
