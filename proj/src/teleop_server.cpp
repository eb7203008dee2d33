#include "furrow/teleop_server.hpp"

#include <atomic>
#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <deque>
#include <iostream>
#include <list>
#include <thread>

#include "furrow/error.hpp"
#include "furrow/teleop.hpp"

namespace furrow {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace ws = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

// Slow observers lose state frames instead of growing without bound.
constexpr std::size_t kMaxQueued = 64;

struct Hub;

class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, Hub& hub) : stream_(std::move(socket)), hub_(hub) {}

  void run() { read_request(); }
  void send(std::shared_ptr<const std::string> msg);
  void close();
  bool open() const { return open_; }

 private:
  void read_request();
  void on_request(beast::error_code ec);
  void read_frame();
  void write_next();
  void do_close();
  void finish();

  beast::tcp_stream stream_;
  std::optional<ws::stream<beast::tcp_stream>> socket_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
  std::shared_ptr<http::response<http::string_body>> plain_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  Hub& hub_;
  bool open_ = false;
  bool writing_ = false;
  bool closing_ = false;
};

struct Hub {
  TeleopSim sim;
  std::list<std::shared_ptr<Session>> sessions;  // front drives

  Hub(const RunConfig& cfg, std::filesystem::path out) : sim(cfg, std::move(out)) {}

  void join(const std::shared_ptr<Session>& s) {
    sessions.push_back(s);
    const bool driver = sessions.front() == s;
    if (driver) sim.driver_changed();
    s->send(role_message(driver));
    s->send(std::make_shared<const std::string>(sim.state_message()));
  }

  void leave(const Session* s) {
    const bool was_driver = !sessions.empty() && sessions.front().get() == s;
    sessions.remove_if([s](const auto& p) { return p.get() == s; });
    if (was_driver && !sessions.empty()) {
      sim.driver_changed();
      sessions.front()->send(role_message(true));
    }
  }

  void on_message(const Session* from, const std::string& text) {
    const bool driver = !sessions.empty() && sessions.front().get() == from;
    for (auto& reply : sim.handle_message(text, driver)) {
      auto msg = std::make_shared<const std::string>(std::move(reply));
      for (auto& s : sessions)
        if (s.get() == from) s->send(msg);
    }
  }

  void broadcast(std::string text) {
    auto msg = std::make_shared<const std::string>(std::move(text));
    for (auto& s : sessions) s->send(msg);
  }

  static std::shared_ptr<const std::string> role_message(bool driver) {
    return std::make_shared<const std::string>(std::string("{\"type\":\"role\",\"role\":\"") +
                                               (driver ? "driver" : "observer") + "\"}");
  }
};

void Session::read_request() {
  http::async_read(stream_, buffer_, request_,
                   [self = shared_from_this()](beast::error_code ec, std::size_t) {
                     self->on_request(ec);
                   });
}

void Session::on_request(beast::error_code ec) {
  if (ec) return;
  if (!ws::is_upgrade(request_)) {
    plain_ = std::make_shared<http::response<http::string_body>>(http::status::ok,
                                                                 request_.version());
    plain_->set(http::field::content_type, "text/plain");
    plain_->body() = "furrow teleop server: connect with a WebSocket client\n";
    plain_->prepare_payload();
    plain_->keep_alive(false);
    http::async_write(stream_, *plain_,
                      [self = shared_from_this()](beast::error_code, std::size_t) {
                        beast::error_code ignored;
                        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                      });
    return;
  }
  stream_.expires_never();
  socket_.emplace(std::move(stream_));
  socket_->set_option(ws::stream_base::timeout::suggested(beast::role_type::server));
  socket_->async_accept(request_, [self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->open_ = true;
    self->hub_.join(self);
    self->read_frame();
  });
}

void Session::read_frame() {
  buffer_.clear();
  socket_->async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) return self->finish();
    self->hub_.on_message(self.get(), beast::buffers_to_string(self->buffer_.data()));
    self->read_frame();
  });
}

void Session::send(std::shared_ptr<const std::string> msg) {
  if (!open_) return;
  if (queue_.size() >= kMaxQueued) return;
  queue_.push_back(std::move(msg));
  if (!writing_) write_next();
}

void Session::write_next() {
  if (queue_.empty() || !open_) {
    writing_ = false;
    return;
  }
  writing_ = true;
  socket_->text(true);
  socket_->async_write(asio::buffer(*queue_.front()),
                       [self = shared_from_this()](beast::error_code ec, std::size_t) {
                         if (ec) return self->finish();
                         self->queue_.pop_front();
                         if (self->closing_) return self->do_close();
                         self->write_next();
                       });
}

// A close may not overlap a pending write, so it waits for that to finish.
void Session::close() {
  if (!open_) return;
  open_ = false;
  closing_ = true;
  if (!writing_) do_close();
}

void Session::do_close() {
  writing_ = false;
  socket_->async_close(ws::close_code::going_away,
                       [self = shared_from_this()](beast::error_code) {});
}

void Session::finish() {
  if (!open_) return;
  open_ = false;
  queue_.clear();
  hub_.leave(this);
}

}  // namespace

struct TeleopServer::Impl {
  RunConfig cfg;
  std::optional<long> max_ticks;
  asio::io_context io{1};
  tcp::acceptor acceptor{io};
  asio::steady_timer timer{io};
  asio::steady_timer grace{io};
  Hub hub;
  std::thread thread;
  std::atomic<long> ticks{0};
  std::chrono::steady_clock::time_point epoch;
  std::chrono::nanoseconds period{};

  Impl(const RunConfig& c, std::filesystem::path out, std::optional<long> m)
      : cfg(c), max_ticks(m), hub(c, std::move(out)) {}

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<Session>(std::move(socket), hub)->run();
      accept();
    });
  }

  // Deadlines sit on a fixed grid from the start time, so late wakeups do
  // not accumulate drift; each wakeup advances the world exactly one dt.
  void schedule() {
    timer.expires_at(epoch + period * (hub.sim.tick_count() + 1));
    timer.async_wait([this](beast::error_code ec) {
      if (ec) return;
      hub.broadcast(hub.sim.tick());
      ticks.store(hub.sim.tick_count());
      if (max_ticks && hub.sim.tick_count() >= *max_ticks) return shutdown();
      schedule();
    });
  }

  void shutdown() {
    beast::error_code ignored;
    acceptor.close(ignored);
    timer.cancel();
    for (auto& s : hub.sessions) s->close();
    hub.sessions.clear();
    // give close frames a moment, then drop whatever is still pending
    grace.expires_after(std::chrono::milliseconds(200));
    grace.async_wait([this](beast::error_code) { io.stop(); });
  }
};

TeleopServer::TeleopServer(const RunConfig& cfg, std::filesystem::path out_dir,
                           std::optional<long> max_ticks)
    : impl_(std::make_unique<Impl>(cfg, std::move(out_dir), max_ticks)) {}

TeleopServer::~TeleopServer() {
  stop();
  wait();
}

unsigned short TeleopServer::start() {
  Impl& m = *impl_;
  beast::error_code ec;
  const auto addr = asio::ip::make_address(m.cfg.teleop.host, ec);
  if (ec) throw ValidationError("teleop.host '" + m.cfg.teleop.host + "' is not an IP address");
  const tcp::endpoint ep(addr, static_cast<unsigned short>(m.cfg.teleop.port));
  m.acceptor.open(ep.protocol(), ec);
  if (!ec) m.acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) m.acceptor.bind(ep, ec);
  if (!ec) m.acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec)
    throw RuntimeFailure("cannot listen on " + m.cfg.teleop.host + ":" +
                         std::to_string(m.cfg.teleop.port) + ": " + ec.message());
  m.period = std::chrono::duration_cast<std::chrono::nanoseconds>(
      std::chrono::duration<double>(1.0 / m.cfg.teleop.tick_hz));
  m.epoch = std::chrono::steady_clock::now();
  m.accept();
  m.schedule();
  m.thread = std::thread([&m] { m.io.run(); });
  return m.acceptor.local_endpoint().port();
}

void TeleopServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void TeleopServer::stop() {
  asio::post(impl_->io, [m = impl_.get()] { m->shutdown(); });
}

long TeleopServer::ticks() const { return impl_->ticks.load(); }

}  // namespace furrow
