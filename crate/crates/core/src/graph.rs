//! Static reactor topology.
//!
//! A [`GraphBuilder`] collects reactors, their ports, actions and reactions,
//! and the connections between ports. [`GraphBuilder::build`] validates the
//! topology and derives its [`Apg`](crate::Apg); a graph with a zero-delay
//! dependency cycle is rejected.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::any::Any;
use core::fmt;
use core::marker::PhantomData;
use core::ops::Deref;

use crate::apg::{build_apg, Apg};
use crate::scheduler::ReactionCtx;
use crate::time::Duration;

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(ReactorId);
id_type!(PortId);
id_type!(ActionId);
id_type!(
    /// Global reaction index, unique across the whole graph.
    ReactionId
);

/// An immutable, cheaply cloneable byte payload.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Payload(Arc<[u8]>);

impl Payload {
    pub fn new(bytes: impl Into<Arc<[u8]>>) -> Self {
        Payload(bytes.into())
    }

    pub fn empty() -> Self {
        Payload(Arc::from(&[][..]))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// The first eight bytes of the payload's SHA-256, big-endian.
    pub fn digest(&self) -> u64 {
        crate::trace::payload_digest(&self.0)
    }
}

impl Deref for Payload {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl From<Vec<u8>> for Payload {
    fn from(v: Vec<u8>) -> Self {
        Payload(v.into())
    }
}

impl From<&[u8]> for Payload {
    fn from(v: &[u8]) -> Self {
        Payload(v.into())
    }
}

impl<const N: usize> From<[u8; N]> for Payload {
    fn from(v: [u8; N]) -> Self {
        Payload(Arc::from(&v[..]))
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Payload({} bytes, {:016x})", self.0.len(), self.digest())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PortKind {
    Input,
    Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionKind {
    /// Scheduled from reactions with a logical delay.
    Logical,
    /// Scheduled from outside the scheduler, tagged with physical time.
    Physical,
}

/// Something that can trigger a reaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Trigger {
    Startup,
    Port(PortId),
    Action(ActionId),
}

impl From<PortId> for Trigger {
    fn from(p: PortId) -> Self {
        Trigger::Port(p)
    }
}

impl From<ActionId> for Trigger {
    fn from(a: ActionId) -> Self {
        Trigger::Action(a)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("input port {0} already has an upstream connection")]
    MultipleUpstream(PortId),
    #[error("connection {from} -> {to} must go from an output port to an input port")]
    InvalidConnection { from: PortId, to: PortId },
    #[error("reaction `{reaction}` refers to {item} which belongs to another reactor")]
    ForeignReference { reaction: String, item: String },
    #[error("reaction `{reaction}`: {detail}")]
    InvalidDeclaration { reaction: String, detail: String },
    #[error("deadline bound must be positive (reaction `{0}`)")]
    ZeroDeadline(String),
    #[error("zero-delay dependency cycle through reactions {0:?}")]
    CyclicDependency(Vec<ReactionId>),
}

#[derive(Clone, Debug)]
pub struct ReactorInfo {
    pub name: String,
    pub reactions: Vec<ReactionId>,
}

#[derive(Clone, Debug)]
pub struct PortInfo {
    pub name: String,
    pub reactor: ReactorId,
    pub kind: PortKind,
}

#[derive(Clone, Debug)]
pub struct ActionInfo {
    pub name: String,
    pub reactor: ReactorId,
    pub kind: ActionKind,
}

#[derive(Clone, Debug)]
pub struct ReactionInfo {
    pub name: String,
    pub reactor: ReactorId,
    pub triggers: Vec<Trigger>,
    /// Ports read without triggering.
    pub sources: Vec<PortId>,
    pub port_effects: Vec<PortId>,
    pub action_effects: Vec<ActionId>,
    pub deadline: Option<Duration>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Connection {
    pub from: PortId,
    pub to: PortId,
    /// `None` for a zero-delay connection.
    pub delay: Option<Duration>,
}

/// The metadata half of a graph: everything except state and code.
#[derive(Clone, Debug, Default)]
pub struct Topology {
    pub reactors: Vec<ReactorInfo>,
    pub ports: Vec<PortInfo>,
    pub actions: Vec<ActionInfo>,
    pub reactions: Vec<ReactionInfo>,
    pub connections: Vec<Connection>,
}

impl Topology {
    pub fn reaction(&self, id: ReactionId) -> &ReactionInfo {
        &self.reactions[id.index()]
    }

    pub fn port(&self, id: PortId) -> &PortInfo {
        &self.ports[id.index()]
    }

    pub fn action(&self, id: ActionId) -> &ActionInfo {
        &self.actions[id.index()]
    }

    /// Upstream output of an input port, if connected.
    pub fn upstream(&self, input: PortId) -> Option<&Connection> {
        self.connections.iter().find(|c| c.to == input)
    }

    /// Fully qualified name, `reactor.reaction`.
    pub fn reaction_name(&self, id: ReactionId) -> String {
        let r = self.reaction(id);
        alloc::format!("{}.{}", self.reactors[r.reactor.index()].name, r.name)
    }

    fn validate(&self) -> Result<(), GraphError> {
        for reaction in &self.reactions {
            let owner = reaction.reactor;
            let foreign = |item: String| GraphError::ForeignReference {
                reaction: reaction.name.clone(),
                item,
            };
            let invalid = |detail: &str| GraphError::InvalidDeclaration {
                reaction: reaction.name.clone(),
                detail: detail.into(),
            };
            for trigger in &reaction.triggers {
                match *trigger {
                    Trigger::Startup => {}
                    Trigger::Port(p) => {
                        let port = self.port(p);
                        if port.reactor != owner {
                            return Err(foreign(alloc::format!("port `{}`", port.name)));
                        }
                        if port.kind != PortKind::Input {
                            return Err(invalid("only input ports can trigger reactions"));
                        }
                    }
                    Trigger::Action(a) => {
                        if self.action(a).reactor != owner {
                            return Err(foreign(alloc::format!(
                                "action `{}`",
                                self.action(a).name
                            )));
                        }
                    }
                }
            }
            for &p in &reaction.sources {
                let port = self.port(p);
                if port.reactor != owner {
                    return Err(foreign(alloc::format!("port `{}`", port.name)));
                }
                if port.kind != PortKind::Input {
                    return Err(invalid("only input ports can be read"));
                }
            }
            for &p in &reaction.port_effects {
                let port = self.port(p);
                if port.reactor != owner {
                    return Err(foreign(alloc::format!("port `{}`", port.name)));
                }
                if port.kind != PortKind::Output {
                    return Err(invalid("only output ports can be written"));
                }
            }
            for &a in &reaction.action_effects {
                let action = self.action(a);
                if action.reactor != owner {
                    return Err(foreign(alloc::format!("action `{}`", action.name)));
                }
                if action.kind != ActionKind::Logical {
                    return Err(invalid(
                        "physical actions are scheduled from outside the scheduler",
                    ));
                }
            }
            if reaction.deadline == Some(Duration::ZERO) {
                return Err(GraphError::ZeroDeadline(reaction.name.clone()));
            }
        }
        Ok(())
    }
}

pub(crate) type Body = Box<dyn FnMut(&mut (dyn Any + Send), &mut ReactionCtx<'_>) + Send>;

pub(crate) struct ReactionCode {
    pub(crate) body: Body,
    pub(crate) deadline_handler: Option<Body>,
}

/// A validated reactor program: topology, precedence graph, initial state
/// and reaction code.
pub struct ReactorGraph {
    pub(crate) topology: Topology,
    pub(crate) apg: Apg,
    pub(crate) states: Vec<Box<dyn Any + Send>>,
    pub(crate) code: Vec<ReactionCode>,
}

impl ReactorGraph {
    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn apg(&self) -> &Apg {
        &self.apg
    }
}

impl fmt::Debug for ReactorGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReactorGraph")
            .field("topology", &self.topology)
            .finish_non_exhaustive()
    }
}

/// Typed handle to a reactor whose state is `S`.
pub struct ReactorKey<S> {
    pub id: ReactorId,
    _state: PhantomData<fn() -> S>,
}

impl<S> Clone for ReactorKey<S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S> Copy for ReactorKey<S> {}

impl<S> fmt::Debug for ReactorKey<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ReactorKey({})", self.id)
    }
}

#[derive(Default)]
pub struct GraphBuilder {
    topology: Topology,
    states: Vec<Box<dyn Any + Send>>,
    code: Vec<ReactionCode>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_reactor<S: Send + 'static>(&mut self, name: &str, state: S) -> ReactorKey<S> {
        let id = ReactorId(self.topology.reactors.len() as u32);
        self.topology.reactors.push(ReactorInfo {
            name: name.into(),
            reactions: Vec::new(),
        });
        self.states.push(Box::new(state));
        ReactorKey {
            id,
            _state: PhantomData,
        }
    }

    fn add_port<S>(&mut self, reactor: ReactorKey<S>, name: &str, kind: PortKind) -> PortId {
        let id = PortId(self.topology.ports.len() as u32);
        self.topology.ports.push(PortInfo {
            name: name.into(),
            reactor: reactor.id,
            kind,
        });
        id
    }

    pub fn input<S>(&mut self, reactor: ReactorKey<S>, name: &str) -> PortId {
        self.add_port(reactor, name, PortKind::Input)
    }

    pub fn output<S>(&mut self, reactor: ReactorKey<S>, name: &str) -> PortId {
        self.add_port(reactor, name, PortKind::Output)
    }

    fn add_action<S>(&mut self, reactor: ReactorKey<S>, name: &str, kind: ActionKind) -> ActionId {
        let id = ActionId(self.topology.actions.len() as u32);
        self.topology.actions.push(ActionInfo {
            name: name.into(),
            reactor: reactor.id,
            kind,
        });
        id
    }

    pub fn logical_action<S>(&mut self, reactor: ReactorKey<S>, name: &str) -> ActionId {
        self.add_action(reactor, name, ActionKind::Logical)
    }

    pub fn physical_action<S>(&mut self, reactor: ReactorKey<S>, name: &str) -> ActionId {
        self.add_action(reactor, name, ActionKind::Physical)
    }

    /// Starts declaring a reaction. Reactions of one reactor are ordered by
    /// declaration.
    pub fn reaction<S: Send + 'static>(
        &mut self,
        reactor: ReactorKey<S>,
        name: &str,
    ) -> ReactionBuilder<'_, S> {
        ReactionBuilder {
            graph: self,
            reactor,
            info: ReactionInfo {
                name: name.into(),
                reactor: reactor.id,
                triggers: Vec::new(),
                sources: Vec::new(),
                port_effects: Vec::new(),
                action_effects: Vec::new(),
                deadline: None,
            },
            deadline_handler: None,
        }
    }

    /// Zero-delay connection: downstream reactions observe the value at the
    /// tag it was written.
    pub fn connect(&mut self, from: PortId, to: PortId) -> Result<(), GraphError> {
        self.add_connection(from, to, None)
    }

    /// Connection whose events arrive `delay` later in logical time.
    pub fn connect_delayed(
        &mut self,
        from: PortId,
        to: PortId,
        delay: Duration,
    ) -> Result<(), GraphError> {
        self.add_connection(from, to, Some(delay))
    }

    fn add_connection(
        &mut self,
        from: PortId,
        to: PortId,
        delay: Option<Duration>,
    ) -> Result<(), GraphError> {
        let valid = self.topology.port(from).kind == PortKind::Output
            && self.topology.port(to).kind == PortKind::Input;
        if !valid {
            return Err(GraphError::InvalidConnection { from, to });
        }
        if self.topology.upstream(to).is_some() {
            return Err(GraphError::MultipleUpstream(to));
        }
        self.topology
            .connections
            .push(Connection { from, to, delay });
        Ok(())
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn build(self) -> Result<ReactorGraph, GraphError> {
        self.topology.validate()?;
        let apg = build_apg(&self.topology)?;
        Ok(ReactorGraph {
            topology: self.topology,
            apg,
            states: self.states,
            code: self.code,
        })
    }
}

pub struct ReactionBuilder<'g, S> {
    graph: &'g mut GraphBuilder,
    reactor: ReactorKey<S>,
    info: ReactionInfo,
    deadline_handler: Option<Body>,
}

fn erase<S: Send + 'static>(
    mut f: impl FnMut(&mut S, &mut ReactionCtx<'_>) + Send + 'static,
) -> Body {
    Box::new(move |state, ctx| {
        let state = state
            .downcast_mut::<S>()
            .expect("reactor state type matches its key");
        f(state, ctx)
    })
}

impl<S: Send + 'static> ReactionBuilder<'_, S> {
    pub fn triggered_by(mut self, trigger: impl Into<Trigger>) -> Self {
        self.info.triggers.push(trigger.into());
        self
    }

    pub fn on_startup(self) -> Self {
        self.triggered_by(Trigger::Startup)
    }

    /// Declares a port the reaction may read without being triggered by it.
    pub fn reads(mut self, port: PortId) -> Self {
        self.info.sources.push(port);
        self
    }

    pub fn writes(mut self, port: PortId) -> Self {
        self.info.port_effects.push(port);
        self
    }

    pub fn schedules(mut self, action: ActionId) -> Self {
        self.info.action_effects.push(action);
        self
    }

    /// Attaches a deadline. When the reaction is dispatched after physical
    /// time has passed `tag + bound`, `handler` runs instead of the body.
    pub fn deadline(
        mut self,
        bound: Duration,
        handler: impl FnMut(&mut S, &mut ReactionCtx<'_>) + Send + 'static,
    ) -> Self {
        self.info.deadline = Some(bound);
        self.deadline_handler = Some(erase(handler));
        self
    }

    pub fn body(self, f: impl FnMut(&mut S, &mut ReactionCtx<'_>) + Send + 'static) -> ReactionId {
        let graph = self.graph;
        let id = ReactionId(graph.topology.reactions.len() as u32);
        graph.topology.reactors[self.reactor.id.index()]
            .reactions
            .push(id);
        graph.topology.reactions.push(self.info);
        graph.code.push(ReactionCode {
            body: erase(f),
            deadline_handler: self.deadline_handler,
        });
        id
    }
}
