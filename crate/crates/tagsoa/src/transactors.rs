//! Reactors that bridge reactor ports and service interfaces.
//!
//! A sending transactor checks its deadline, puts `t + D` into the
//! timestamp bypass and hands the payload to the middleware, whose tagged
//! binding moves the tag into the message trailer. A receiving transactor
//! takes the trailer back out of the bypass and inserts the payload as a
//! physical action at exactly `g + L + E`. Anything that breaks the latency
//! or skew assumptions shows up as an encoded [`TransactorError`] on the
//! transactor's `error` port.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use tagsoa_core::{
    check_causality, ActionId, Admission, Duration, GraphBuilder, PortId, ReactionCtx,
    RuntimeError, TransactorConfig, TransactorError,
};

use crate::middleware::{Endpoint, EndpointId, MiddlewareError, Proxy, Responder, Skeleton};
use crate::runtime::RuntimeHandle;

/// Client side of a method: `request` in, `response` out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClientMethod {
    pub request: PortId,
    pub response: PortId,
    pub error: PortId,
}

/// Server side of a method: `request` out, `response` in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ServerMethod {
    pub request: PortId,
    pub response: PortId,
    pub error: PortId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventPublisher {
    pub input: PortId,
    pub error: PortId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventSubscriber {
    pub output: PortId,
    pub error: PortId,
}

fn report(ctx: &mut ReactionCtx<'_>, port: PortId, error: TransactorError) {
    ctx.set(port, error.encode())
        .expect("error port is a declared effect");
}

fn forward(ctx: &mut ReactionCtx<'_>, from: ActionId, to: PortId) {
    let value = ctx.action_value(from).cloned().expect("triggering action");
    ctx.set(to, value).expect("declared effect");
}

fn violation(ctx: &ReactionCtx<'_>, deadline: Duration) -> TransactorError {
    TransactorError::DeadlineViolation {
        tag: ctx.tag(),
        deadline,
    }
}

/// Receive path shared by every transactor that turns messages into events.
#[derive(Clone)]
struct Admitter {
    endpoint: Arc<Endpoint>,
    config: TransactorConfig,
    runtime: RuntimeHandle,
    deliver: ActionId,
    fail: ActionId,
}

impl Admitter {
    /// Called from a middleware handler, while the trailer of `call_id` is
    /// in the bypass. On success returns the tag of the inserted event.
    fn admit(&self, call_id: u32, received_at: u64, payload: Vec<u8>) -> Option<tagsoa_core::Tag> {
        let trailer = self
            .endpoint
            .bypass()
            .take(self.endpoint.id(), call_id)
            .ok();
        let inserted = match self.config.admit(trailer, received_at) {
            Ok(Admission::Tagged(tag)) => self.runtime.insert_at(self.deliver, tag, payload),
            Ok(Admission::Physical(_)) => {
                self.runtime
                    .schedule_physical(self.deliver, Duration::ZERO, payload)
            }
            Err(error) => {
                self.fail(error);
                return None;
            }
        };
        match inserted {
            Ok(tag) => Some(tag),
            Err(RuntimeError::Stale(stale)) => {
                self.fail(TransactorError::StaleTag {
                    tag: stale.tag,
                    current: stale.current,
                });
                None
            }
            Err(_) => None,
        }
    }

    fn fail(&self, error: TransactorError) {
        // Fails only once the runtime has stopped, when nobody listens.
        let _ = self
            .runtime
            .schedule_physical(self.fail, Duration::ZERO, error.encode());
    }
}

/// Adds a client method transactor calling `method_id` through `proxy`.
///
/// `runtime` is the handle of the runtime the graph will be installed in.
pub fn client_method(
    g: &mut GraphBuilder,
    name: &str,
    proxy: Arc<Proxy>,
    method_id: u16,
    config: TransactorConfig,
    runtime: RuntimeHandle,
) -> ClientMethod {
    let r = g.add_reactor(name, ());
    let request = g.input(r, "request");
    let response = g.output(r, "response");
    let error = g.output(r, "error");
    let completed = g.physical_action(r, "completed");
    let failed = g.physical_action(r, "failed");
    let admitter = Admitter {
        endpoint: proxy.endpoint().clone(),
        config,
        runtime,
        deliver: completed,
        fail: failed,
    };
    let deadline = config.deadline;
    g.reaction(r, "call")
        .triggered_by(request)
        .writes(error)
        .deadline(deadline, move |_, ctx| {
            let e = violation(ctx, deadline);
            report(ctx, error, e)
        })
        .body(move |_, ctx| {
            let args = ctx.get(request).expect("triggering input").to_vec();
            let endpoint = proxy.endpoint();
            let call_id = proxy.reserve_call_id();
            endpoint
                .bypass()
                .put(endpoint.id(), call_id, config.send_tag(ctx.tag()))
                .expect("fresh call id");
            let admitter = admitter.clone();
            proxy.call_with(method_id, call_id, args, ctx.physical_time(), move |resp| {
                admitter.admit(resp.call_id, resp.received_at, resp.payload);
            });
        });
    g.reaction(r, "complete")
        .triggered_by(completed)
        .writes(response)
        .body(move |_, ctx| forward(ctx, completed, response));
    g.reaction(r, "fail")
        .triggered_by(failed)
        .writes(error)
        .body(move |_, ctx| forward(ctx, failed, error));
    ClientMethod {
        request,
        response,
        error,
    }
}

type CallKey = (EndpointId, u32);

#[derive(Default)]
struct ServerState {
    /// Requests delivered to the logic and not yet answered, oldest first.
    outstanding: VecDeque<(CallKey, tagsoa_core::Tag)>,
}

fn encode_call(key: CallKey, args: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + args.len());
    out.extend_from_slice(&key.0 .0.to_be_bytes());
    out.extend_from_slice(&key.1.to_be_bytes());
    out.extend_from_slice(args);
    out
}

fn decode_call(bytes: &[u8]) -> (CallKey, &[u8]) {
    let from = u32::from_be_bytes(bytes[0..4].try_into().expect("call header"));
    let call_id = u32::from_be_bytes(bytes[4..8].try_into().expect("call header"));
    ((EndpointId(from), call_id), &bytes[8..])
}

/// Adds a server method transactor implementing `method_id` of `skeleton`.
///
/// The logic answers requests in the order it received them, by writing
/// `response` at a tag no earlier than the request's.
pub fn server_method(
    g: &mut GraphBuilder,
    name: &str,
    skeleton: &Skeleton,
    method_id: u16,
    config: TransactorConfig,
    runtime: RuntimeHandle,
) -> ServerMethod {
    let r = g.add_reactor(name, ServerState::default());
    let request = g.output(r, "request");
    let response = g.input(r, "response");
    let error = g.output(r, "error");
    let arrived = g.physical_action(r, "arrived");
    let failed = g.physical_action(r, "failed");
    let endpoint = skeleton.endpoint().clone();
    let responders: Arc<Mutex<HashMap<CallKey, Responder>>> = Arc::default();
    let admitter = Admitter {
        endpoint: endpoint.clone(),
        config,
        runtime,
        deliver: arrived,
        fail: failed,
    };
    {
        let responders = responders.clone();
        skeleton.bind(method_id, move |req, responder| {
            let key = (req.from, req.call_id);
            responders
                .lock()
                .expect("responders")
                .insert(key, responder);
            let payload = encode_call(key, &req.payload);
            if admitter
                .admit(req.call_id, req.received_at, payload)
                .is_none()
            {
                responders.lock().expect("responders").remove(&key);
            }
        });
    }
    g.reaction(r, "accept")
        .triggered_by(arrived)
        .writes(request)
        .body(move |s: &mut ServerState, ctx| {
            let value = ctx
                .action_value(arrived)
                .cloned()
                .expect("triggering action");
            let (key, args) = decode_call(&value);
            s.outstanding.push_back((key, ctx.tag()));
            ctx.set(request, args.to_vec()).expect("declared effect");
        });
    let deadline = config.deadline;
    let late = responders.clone();
    g.reaction(r, "respond")
        .triggered_by(response)
        .writes(error)
        .deadline(deadline, move |s: &mut ServerState, ctx| {
            if let Some((key, _)) = s.outstanding.pop_front() {
                late.lock().expect("responders").remove(&key);
            }
            let e = violation(ctx, deadline);
            report(ctx, error, e)
        })
        .body(move |s: &mut ServerState, ctx| {
            let front = s.outstanding.front().copied();
            if let Err(e) = check_causality(front.map(|(_, tag)| tag), ctx.tag()) {
                return report(ctx, error, e);
            }
            let (key, _) = s.outstanding.pop_front().expect("checked above");
            let Some(responder) = responders.lock().expect("responders").remove(&key) else {
                return;
            };
            let payload = ctx.get(response).expect("triggering input").to_vec();
            endpoint
                .bypass()
                .put(endpoint.id(), key.1, config.send_tag(ctx.tag()))
                .expect("fresh call id");
            responder.respond(payload, ctx.physical_time());
        });
    g.reaction(r, "fail")
        .triggered_by(failed)
        .writes(error)
        .body(move |_, ctx| forward(ctx, failed, error));
    ServerMethod {
        request,
        response,
        error,
    }
}

/// Adds a transactor publishing `input` as notifications of `event_id`.
pub fn event_publisher(
    g: &mut GraphBuilder,
    name: &str,
    skeleton: Arc<Skeleton>,
    event_id: u16,
    config: TransactorConfig,
) -> EventPublisher {
    let r = g.add_reactor(name, 0u32);
    let input = g.input(r, "input");
    let error = g.output(r, "error");
    let deadline = config.deadline;
    g.reaction(r, "publish")
        .triggered_by(input)
        .writes(error)
        .deadline(deadline, move |_, ctx| {
            let e = violation(ctx, deadline);
            report(ctx, error, e)
        })
        .body(move |seq: &mut u32, ctx| {
            let payload = ctx.get(input).expect("triggering input").to_vec();
            let endpoint = skeleton.endpoint();
            let call_id = *seq;
            *seq = seq.wrapping_add(1);
            endpoint
                .bypass()
                .put(endpoint.id(), call_id, config.send_tag(ctx.tag()))
                .expect("fresh call id");
            skeleton.notify_with_id(event_id, call_id, payload, ctx.physical_time());
        });
    EventPublisher { input, error }
}

/// Adds a transactor turning notifications of `event_id` into events.
pub fn event_subscriber(
    g: &mut GraphBuilder,
    name: &str,
    proxy: &Proxy,
    event_id: u16,
    config: TransactorConfig,
    runtime: RuntimeHandle,
) -> EventSubscriber {
    let r = g.add_reactor(name, ());
    let output = g.output(r, "output");
    let error = g.output(r, "error");
    let received = g.physical_action(r, "received");
    let failed = g.physical_action(r, "failed");
    let admitter = Admitter {
        endpoint: proxy.endpoint().clone(),
        config,
        runtime,
        deliver: received,
        fail: failed,
    };
    proxy.subscribe(event_id, move |n| {
        admitter.admit(n.call_id, n.received_at, n.payload);
    });
    g.reaction(r, "receive")
        .triggered_by(received)
        .writes(output)
        .body(move |_, ctx| forward(ctx, received, output));
    g.reaction(r, "fail")
        .triggered_by(failed)
        .writes(error)
        .body(move |_, ctx| forward(ctx, failed, error));
    EventSubscriber { output, error }
}

/// Client side of a field: getter and setter methods plus change events.
/// Accessors the field does not declare are absent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClientField {
    pub get: Option<ClientMethod>,
    pub set: Option<ClientMethod>,
    pub notify: Option<EventSubscriber>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServerField {
    pub get: Option<ServerMethod>,
    pub set: Option<ServerMethod>,
    pub notify: Option<EventPublisher>,
}

impl ClientField {
    pub fn count(&self) -> usize {
        usize::from(self.get.is_some())
            + usize::from(self.set.is_some())
            + usize::from(self.notify.is_some())
    }
}

impl ServerField {
    pub fn count(&self) -> usize {
        usize::from(self.get.is_some())
            + usize::from(self.set.is_some())
            + usize::from(self.notify.is_some())
    }
}

fn field_ids(
    registry: &crate::middleware::Registry,
    service_id: u16,
    field: &str,
) -> Result<crate::middleware::FieldIds, MiddlewareError> {
    registry
        .descriptor(service_id)?
        .field_ids(field)
        .ok_or_else(|| MiddlewareError::InvalidDescriptor(format!("no field named {field}")))
}

/// Wires the transactors a client needs for `field`.
pub fn client_field(
    g: &mut GraphBuilder,
    proxy: Arc<Proxy>,
    field: &str,
    config: TransactorConfig,
    runtime: RuntimeHandle,
) -> Result<ClientField, MiddlewareError> {
    let ids = field_ids(proxy.endpoint().registry(), proxy.service_id(), field)?;
    let method = |g: &mut GraphBuilder, id: Option<u16>, suffix: &str| {
        id.map(|id| {
            let name = format!("{field}.{suffix}");
            client_method(g, &name, proxy.clone(), id, config, runtime.clone())
        })
    };
    let get = method(g, ids.get, "get");
    let set = method(g, ids.set, "set");
    let notify = ids.notify.map(|id| {
        event_subscriber(
            g,
            &format!("{field}.notify"),
            &proxy,
            id,
            config,
            runtime.clone(),
        )
    });
    Ok(ClientField { get, set, notify })
}

/// Wires the transactors a server needs to offer `field`.
pub fn server_field(
    g: &mut GraphBuilder,
    skeleton: Arc<Skeleton>,
    field: &str,
    config: TransactorConfig,
    runtime: RuntimeHandle,
) -> Result<ServerField, MiddlewareError> {
    let ids = skeleton
        .descriptor()
        .field_ids(field)
        .ok_or_else(|| MiddlewareError::InvalidDescriptor(format!("no field named {field}")))?;
    let method = |g: &mut GraphBuilder, id: Option<u16>, suffix: &str| {
        id.map(|id| {
            let name = format!("{field}.{suffix}");
            server_method(g, &name, &skeleton, id, config, runtime.clone())
        })
    };
    let get = method(g, ids.get, "get");
    let set = method(g, ids.set, "set");
    let notify = ids
        .notify
        .map(|id| event_publisher(g, &format!("{field}.notify"), skeleton.clone(), id, config));
    Ok(ServerField { get, set, notify })
}
