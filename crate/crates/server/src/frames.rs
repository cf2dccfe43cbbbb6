//! `/v1/frames`: the client sends [`RenderRequest`] JSON text messages and
//! receives binary frames (layout in `morphield::surfacing`). Requests that arrive while a
//! frame is rendering collapse to the newest one. After every edit the last
//! unpinned request is rendered again at the new revision. Errors come back as
//! text messages with the same body as HTTP errors.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use tokio::task::JoinHandle;

use crate::error::{ErrorBody, ErrorDetail};
use crate::{encode_frame, render_snapshot, ApiError, AppState, RenderRequest};

pub(crate) async fn frames(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| run(state, socket))
}

type Rendering = JoinHandle<Result<Vec<u8>, ApiError>>;

fn start(state: &AppState, req: RenderRequest) -> Rendering {
    let state = state.clone();
    tokio::spawn(async move {
        let (rev, frame) = render_snapshot(&state, &req).await?;
        Ok(encode_frame(&frame, rev, req.seq, req.depth))
    })
}

fn error_text(e: ApiError) -> Message {
    let body = ErrorBody {
        error: ErrorDetail {
            code: e.code.to_string(),
            message: e.message,
        },
    };
    Message::Text(serde_json::to_string(&body).unwrap_or_default().into())
}

async fn run(state: AppState, mut socket: WebSocket) {
    let mut revisions = state.subscribe();
    revisions.mark_unchanged();
    let mut pending: Option<RenderRequest> = None;
    let mut last: Option<RenderRequest> = None;
    let mut in_flight: Option<Rendering> = None;
    loop {
        if in_flight.is_none() {
            if let Some(req) = pending.take() {
                in_flight = Some(start(&state, req.clone()));
                last = Some(req);
            }
        }
        tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => match serde_json::from_str::<RenderRequest>(&text) {
                    Ok(req) => pending = Some(req),
                    Err(e) => {
                        let e = ApiError::new(axum::http::StatusCode::BAD_REQUEST, "malformed_request", e.to_string());
                        if socket.send(error_text(e)).await.is_err() {
                            break;
                        }
                    }
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            changed = revisions.changed() => {
                if changed.is_err() {
                    break;
                }
                if pending.is_none() {
                    pending = last.clone().filter(|r| r.revision.is_none());
                }
            },
            done = async { in_flight.as_mut().unwrap().await }, if in_flight.is_some() => {
                in_flight = None;
                let msg = match done {
                    Ok(Ok(bytes)) => Message::Binary(bytes.into()),
                    Ok(Err(e)) => error_text(e),
                    Err(e) => error_text(ApiError::internal(e)),
                };
                if socket.send(msg).await.is_err() {
                    break;
                }
            },
        }
    }
    if let Some(h) = in_flight {
        h.abort();
    }
}
