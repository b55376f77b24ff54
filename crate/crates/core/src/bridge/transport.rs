//! Datagram transports and the client side of the bridge.

use std::io::ErrorKind;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::plant::{PlantConfig, PlantServer};
use super::protocol::{CommandMessage, Message, PoseMessage};
use super::{tick_timestamp_us, BridgeError, ExternalVehicle, PlantCommand, PlantPose};

const POLL: Duration = Duration::from_millis(20);

pub trait DatagramTx: Send {
    fn send(&mut self, buf: &[u8]) -> Result<(), BridgeError>;
}

pub trait DatagramRx: Send {
    /// `Ok(None)` on timeout.
    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, BridgeError>;
}

/// Server side of a transport: replies go to whoever sent the last datagram.
pub trait PlantEndpoint: Send {
    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, BridgeError>;
    fn reply(&mut self, buf: &[u8]) -> Result<(), BridgeError>;
}

pub struct ChannelTx(mpsc::Sender<Vec<u8>>);
pub struct ChannelRx(mpsc::Receiver<Vec<u8>>);

impl DatagramTx for ChannelTx {
    fn send(&mut self, buf: &[u8]) -> Result<(), BridgeError> {
        self.0.send(buf.to_vec()).map_err(|_| BridgeError::Disconnected)
    }
}

impl DatagramRx for ChannelRx {
    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, BridgeError> {
        match self.0.recv_timeout(timeout) {
            Ok(b) => Ok(Some(b)),
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(None),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(BridgeError::Disconnected),
        }
    }
}

pub struct ChannelEndpoint {
    pub tx: ChannelTx,
    pub rx: ChannelRx,
}

impl PlantEndpoint for ChannelEndpoint {
    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, BridgeError> {
        self.rx.recv(timeout)
    }
    fn reply(&mut self, buf: &[u8]) -> Result<(), BridgeError> {
        self.tx.send(buf)
    }
}

/// In-memory datagram link: `(client tx, client rx)` and the plant endpoint.
pub fn channel_link() -> ((ChannelTx, ChannelRx), ChannelEndpoint) {
    let (to_plant, plant_in) = mpsc::channel();
    let (to_client, client_in) = mpsc::channel();
    ((ChannelTx(to_plant), ChannelRx(client_in)), ChannelEndpoint { tx: ChannelTx(to_client), rx: ChannelRx(plant_in) })
}

pub struct UdpTx(UdpSocket);
pub struct UdpRx(UdpSocket);

fn recv_udp(sock: &UdpSocket, timeout: Duration) -> Result<Option<(Vec<u8>, SocketAddr)>, BridgeError> {
    sock.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
    let mut buf = [0u8; 256];
    match sock.recv_from(&mut buf) {
        Ok((n, from)) => Ok(Some((buf[..n].to_vec(), from))),
        // an unreachable peer surfaces as refused on connected sockets
        Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::ConnectionRefused) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

impl DatagramTx for UdpTx {
    fn send(&mut self, buf: &[u8]) -> Result<(), BridgeError> {
        match self.0.send(buf) {
            Ok(_) => Ok(()),
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => Ok(()),
            Err(e) => Err(e.into()),
        }
    }
}

impl DatagramRx for UdpRx {
    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, BridgeError> {
        Ok(recv_udp(&self.0, timeout)?.map(|(b, _)| b))
    }
}

/// Client socket connected to the plant at `addr`.
pub fn udp_client<A: ToSocketAddrs>(addr: A) -> Result<(UdpTx, UdpRx), BridgeError> {
    let target = addr.to_socket_addrs()?.next().ok_or_else(|| BridgeError::Io("unresolvable plant address".into()))?;
    let local: SocketAddr = if target.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("literal address");
    let sock = UdpSocket::bind(local)?;
    sock.connect(target)?;
    Ok((UdpTx(sock.try_clone()?), UdpRx(sock)))
}

pub struct UdpEndpoint {
    sock: UdpSocket,
    peer: Option<SocketAddr>,
}

impl UdpEndpoint {
    pub fn bind<A: ToSocketAddrs>(addr: A) -> Result<Self, BridgeError> {
        Ok(Self { sock: UdpSocket::bind(addr)?, peer: None })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, BridgeError> {
        Ok(self.sock.local_addr()?)
    }
}

impl PlantEndpoint for UdpEndpoint {
    fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<u8>>, BridgeError> {
        Ok(recv_udp(&self.sock, timeout)?.map(|(b, from)| {
            self.peer = Some(from);
            b
        }))
    }
    fn reply(&mut self, buf: &[u8]) -> Result<(), BridgeError> {
        match self.peer {
            Some(p) => {
                self.sock.send_to(buf, p)?;
                Ok(())
            }
            None => Ok(()),
        }
    }
}

/// Plant loop: answers datagrams until `stop` is set or the link closes.
pub fn serve_plant<E: PlantEndpoint>(endpoint: &mut E, server: &mut PlantServer, stop: &AtomicBool) -> Result<(), BridgeError> {
    while !stop.load(Ordering::Relaxed) {
        match endpoint.recv(POLL) {
            Ok(Some(buf)) => {
                if let Some(reply) = server.handle_bytes(&buf) {
                    endpoint.reply(&reply)?;
                }
            }
            Ok(None) => {}
            Err(BridgeError::Disconnected) => return Ok(()),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// A plant serving on its own thread; stopped on drop.
pub struct PlantThread {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<Result<(), BridgeError>>>,
}

impl PlantThread {
    pub fn spawn<E: PlantEndpoint + 'static>(mut endpoint: E, mut server: PlantServer) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = std::thread::spawn(move || serve_plant(&mut endpoint, &mut server, &flag));
        Self { stop, handle: Some(handle) }
    }

    pub fn stop(mut self) -> Result<(), BridgeError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<(), BridgeError> {
        self.stop.store(true, Ordering::Relaxed);
        match self.handle.take() {
            Some(h) => h.join().unwrap_or(Err(BridgeError::Disconnected)),
            None => Ok(()),
        }
    }
}

impl Drop for PlantThread {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

#[derive(Default)]
struct Slot {
    latest: Option<PoseMessage>,
    closed: bool,
}

/// Single-slot latest-value mailbox; newest pose wins.
#[derive(Clone, Default)]
struct Mailbox(Arc<(Mutex<Slot>, Condvar)>);

impl Mailbox {
    fn put(&self, pose: PoseMessage) {
        let (m, cv) = &*self.0;
        let mut slot = m.lock().expect("mailbox lock");
        if slot.latest.is_none_or(|p| p.timestamp_us <= pose.timestamp_us || p.vehicle_id != pose.vehicle_id) {
            slot.latest = Some(pose);
        }
        cv.notify_all();
    }

    fn close(&self) {
        let (m, cv) = &*self.0;
        m.lock().expect("mailbox lock").closed = true;
        cv.notify_all();
    }

    /// Takes the newest pose for `id` stamped at or after `min_ts`.
    fn take(&self, id: u32, min_ts: u64, timeout: Duration) -> Result<Option<PoseMessage>, BridgeError> {
        let (m, cv) = &*self.0;
        let deadline = Instant::now() + timeout;
        let mut slot = m.lock().expect("mailbox lock");
        loop {
            if let Some(p) = slot.latest {
                if p.vehicle_id == id && p.timestamp_us >= min_ts {
                    slot.latest = None;
                    return Ok(Some(p));
                }
            }
            if slot.closed {
                return Err(BridgeError::Disconnected);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            slot = cv.wait_timeout(slot, deadline - now).expect("mailbox lock").0;
        }
    }
}

/// Bridge client talking to a plant over a datagram transport. A receiver
/// thread decodes incoming poses into a latest-value mailbox.
pub struct RemotePlant {
    tx: Box<dyn DatagramTx>,
    mailbox: Mailbox,
    stop: Arc<AtomicBool>,
    receiver: Option<JoinHandle<()>>,
    dt: f64,
    pose_wait: Duration,
    ack_wait: Duration,
    vehicle_id: u32,
    /// Offset keeping timestamps monotone across resets.
    base_tick: u64,
    last_tick: u64,
    last_reset: Option<PlantPose<f64>>,
}

impl RemotePlant {
    pub fn new<Tx, Rx>(tx: Tx, mut rx: Rx, dt: f64, pose_wait: Duration, ack_wait: Duration) -> Self
    where
        Tx: DatagramTx + 'static,
        Rx: DatagramRx + 'static,
    {
        let mailbox = Mailbox::default();
        let stop = Arc::new(AtomicBool::new(false));
        let (mb, flag) = (mailbox.clone(), Arc::clone(&stop));
        let receiver = std::thread::spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                match rx.recv(POLL) {
                    Ok(Some(buf)) => match Message::decode(&buf) {
                        Ok(Message::Pose(p)) => mb.put(p),
                        Ok(Message::Command(_)) => log::warn!("bridge client ignored a command datagram"),
                        Err(e) => log::warn!("bridge client dropped datagram: {e}"),
                    },
                    Ok(None) => {}
                    Err(_) => break,
                }
            }
            mb.close();
        });
        Self {
            tx: Box::new(tx),
            mailbox,
            stop,
            receiver: Some(receiver),
            dt,
            pose_wait,
            ack_wait,
            vehicle_id: 0,
            base_tick: 0,
            last_tick: 0,
            last_reset: None,
        }
    }

    /// Connects to a plant over UDP.
    pub fn udp<A: ToSocketAddrs>(addr: A, dt: f64, pose_wait: Duration, ack_wait: Duration) -> Result<Self, BridgeError> {
        let (tx, rx) = udp_client(addr)?;
        Ok(Self::new(tx, rx, dt, pose_wait, ack_wait))
    }

    fn stamp(&self, tick: u64) -> u64 {
        tick_timestamp_us(self.base_tick + tick, self.dt)
    }

    fn send_reset(&mut self, pose: PlantPose<f64>) -> Result<(), BridgeError> {
        let ts = self.stamp(0);
        let msg = PoseMessage { vehicle_id: self.vehicle_id, timestamp_us: ts, x: pose.x, y: pose.y, heading: pose.heading, speed: pose.speed };
        self.tx.send(&msg.encode())?;
        match self.mailbox.take(self.vehicle_id, ts, self.ack_wait)? {
            Some(_) => Ok(()),
            None => Err(BridgeError::NoAck),
        }
    }
}

impl ExternalVehicle<f64> for RemotePlant {
    fn reset(&mut self, vehicle_id: u32, pose: PlantPose<f64>) -> Result<(), BridgeError> {
        self.vehicle_id = vehicle_id;
        self.base_tick += self.last_tick + 1;
        self.last_tick = 0;
        self.last_reset = Some(pose);
        self.send_reset(pose)
    }

    fn exchange(&mut self, tick: u64, command: PlantCommand<f64>) -> Result<Option<PlantPose<f64>>, BridgeError> {
        self.last_tick = self.last_tick.max(tick + 1);
        let msg = CommandMessage {
            vehicle_id: self.vehicle_id,
            timestamp_us: self.stamp(tick),
            steering: command.steering,
            target_speed: command.target_speed,
        };
        self.tx.send(&msg.encode())?;
        let pose = self.mailbox.take(self.vehicle_id, self.stamp(tick + 1), self.pose_wait)?;
        Ok(pose.map(|p| PlantPose { x: p.x, y: p.y, heading: p.heading, speed: p.speed }))
    }

    fn reconnect(&mut self) -> Result<(), BridgeError> {
        let pose = self.last_reset.unwrap_or(PlantPose { x: 0.0, y: 0.0, heading: 0.0, speed: 0.0 });
        self.base_tick += self.last_tick + 1;
        self.last_tick = 0;
        self.send_reset(pose)
    }
}

impl Drop for RemotePlant {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.receiver.take() {
            let _ = h.join();
        }
    }
}

/// Plant stepped synchronously in the caller's thread, with every exchange
/// passed through the wire encoding.
#[derive(Debug, Clone)]
pub struct InProcessPlant {
    server: PlantServer,
    dt: f64,
    vehicle_id: u32,
}

impl InProcessPlant {
    pub fn new(config: PlantConfig, wheel_base: f64, accel_limit: f64, dt: f64) -> Self {
        Self { server: PlantServer::new(config, wheel_base, accel_limit, dt), dt, vehicle_id: 0 }
    }

    pub fn server(&self) -> &PlantServer {
        &self.server
    }
}

impl ExternalVehicle<f64> for InProcessPlant {
    fn reset(&mut self, vehicle_id: u32, pose: PlantPose<f64>) -> Result<(), BridgeError> {
        self.vehicle_id = vehicle_id;
        let msg = PoseMessage { vehicle_id, timestamp_us: 0, x: pose.x, y: pose.y, heading: pose.heading, speed: pose.speed };
        self.server.handle_bytes(&msg.encode()).map(|_| ()).ok_or(BridgeError::NoAck)
    }

    fn exchange(&mut self, tick: u64, command: PlantCommand<f64>) -> Result<Option<PlantPose<f64>>, BridgeError> {
        let msg = CommandMessage {
            vehicle_id: self.vehicle_id,
            timestamp_us: tick_timestamp_us(tick, self.dt),
            steering: command.steering,
            target_speed: command.target_speed,
        };
        let Some(reply) = self.server.handle_bytes(&msg.encode()) else {
            return Err(BridgeError::Disconnected);
        };
        let p = PoseMessage::decode(&reply)?;
        Ok(Some(PlantPose { x: p.x, y: p.y, heading: p.heading, speed: p.speed }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> PlantPose<f64> {
        PlantPose { x: 0.0, y: 0.0, heading: 0.0, speed: 0.0 }
    }

    fn drive<E: ExternalVehicle<f64>>(link: &mut E) -> Vec<PlantPose<f64>> {
        link.reset(0, origin()).unwrap();
        (0..50)
            .map(|t| link.exchange(t, PlantCommand { steering: 0.1, target_speed: 1.0 }).unwrap().unwrap())
            .collect()
    }

    #[test]
    fn channel_and_inprocess_agree() {
        let (client, endpoint) = channel_link();
        let _plant = PlantThread::spawn(endpoint, PlantServer::new(PlantConfig::ideal(), 0.16, 0.75, 0.02));
        let mut remote = RemotePlant::new(client.0, client.1, 0.02, Duration::from_secs(2), Duration::from_secs(2));
        let mut local = InProcessPlant::new(PlantConfig::ideal(), 0.16, 0.75, 0.02);
        assert_eq!(drive(&mut remote), drive(&mut local));
        // a second episode restarts cleanly
        assert_eq!(drive(&mut remote), drive(&mut local));
    }

    #[test]
    fn udp_loopback_round_trip() {
        let endpoint = UdpEndpoint::bind("127.0.0.1:0").unwrap();
        let addr = endpoint.local_addr().unwrap();
        let _plant = PlantThread::spawn(endpoint, PlantServer::new(PlantConfig::ideal(), 0.16, 0.75, 0.02));
        let mut remote = RemotePlant::udp(addr, 0.02, Duration::from_secs(2), Duration::from_secs(2)).unwrap();
        let mut local = InProcessPlant::new(PlantConfig::ideal(), 0.16, 0.75, 0.02);
        assert_eq!(drive(&mut remote), drive(&mut local));
    }

    #[test]
    fn absent_plant_is_not_acknowledged() {
        let probe = UdpSocket::bind("127.0.0.1:0").unwrap();
        let addr = probe.local_addr().unwrap();
        drop(probe);
        let mut remote = RemotePlant::udp(addr, 0.02, Duration::from_millis(20), Duration::from_millis(50)).unwrap();
        assert_eq!(remote.reset(0, origin()), Err(BridgeError::NoAck));
    }
}
