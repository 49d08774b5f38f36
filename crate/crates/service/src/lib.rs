//! HTTP/JSON front end for a cdb store.
//!
//! Every handler runs the blocking library call on tokio's blocking pool.
//! Errors come back as `{"code": ..., "message": ...}` with a status derived
//! from the error kind.

mod routes;

use std::net::SocketAddr;
use std::sync::Arc;

use cdb_core::postproc::PostProc;
use cdb_core::{Config, Store};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

pub use routes::{router, PutBody};

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub postproc: PostProc,
    pub config: Arc<Config>,
}

impl AppState {
    pub fn new(store: Arc<Store>, config: Config) -> AppState {
        let postproc = PostProc::new(Arc::clone(store.files().catalog()));
        AppState {
            store,
            postproc,
            config: Arc::new(config),
        }
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own thread and runtime.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves from a background thread.
pub fn spawn(config: Config, addr: &str) -> cdb_core::Result<ServiceHandle> {
    let store = Arc::new(Store::open(&config)?);
    let state = AppState::new(store, config);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    let listener = runtime.block_on(TcpListener::bind(addr))?;
    let local = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(serve(listener, state, async {
            let _ = rx.await;
        }))
    });
    Ok(ServiceHandle {
        addr: local,
        stop: Some(tx),
        thread: Some(thread),
    })
}

/// Serves `config.listen_addr` on the current thread until Ctrl-C.
pub fn run_forever(config: Config) -> cdb_core::Result<()> {
    let store = Arc::new(Store::open(&config)?);
    let addr = config.listen_addr.clone();
    let state = AppState::new(store, config);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = TcpListener::bind(&addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(())
}
