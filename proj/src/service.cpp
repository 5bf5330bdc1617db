#include "langdrive/service.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <deque>
#include <mutex>

#include "json.hpp"

namespace langdrive {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using nlohmann::ordered_json;

namespace {

std::string error_body(const std::string& msg) { return ordered_json{{"error", msg}}.dump(); }

std::string params_body(const MpcParams& p) {
  ordered_json j;
  ordered_json values;
  for (const auto& [k, v] : p.to_map()) values[k] = v;
  j["params"] = values;
  j["hash"] = p.hash();
  return j.dump();
}

}  // namespace

HttpReply handle_api(Session& session, const std::string& method, const std::string& target,
                     const std::string& body) {
  const std::string path = target.substr(0, target.find('?'));
  try {
    if (path == "/prompt") {
      if (method != "POST") return {405, error_body("use POST")};
      const auto j = nlohmann::json::parse(body);
      const std::string text = j.at("text").get<std::string>();
      session.submit_prompt(text);
      return {202, ordered_json{{"accepted", true}, {"text", text}}.dump()};
    }
    if (path == "/params") {
      if (method == "GET") return {200, params_body(session.params())};
      if (method != "POST") return {405, error_body("use GET or POST")};
      const auto j = nlohmann::json::parse(body);
      if (!j.is_object()) return {400, error_body("expected an object of name: value")};
      ParamMap raw;
      std::vector<std::string> skipped;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.value().is_number()) param_map_set(raw, it.key(), it.value().get<double>());
        else skipped.push_back(it.key());
      }
      const ParamUpdate u = session.apply_params(raw, "ui");
      ordered_json out = ordered_json::parse(params_body(session.params()));
      ordered_json acc = ordered_json::object();
      for (const auto& [k, v] : u.accepted) acc[k] = v;
      out["accepted"] = acc;
      out["warnings"] = u.warnings;
      std::vector<std::string> rejected = u.rejected;
      rejected.insert(rejected.end(), skipped.begin(), skipped.end());
      out["rejected"] = rejected;
      return {200, out.dump()};
    }
    if (path == "/journal") {
      if (method != "GET") return {405, error_body("use GET")};
      return {200, session.journal_json()};
    }
  } catch (const nlohmann::json::exception& e) {
    return {400, error_body(std::string("bad JSON: ") + e.what())};
  } catch (const std::invalid_argument& e) {
    return {400, error_body(e.what())};
  }
  return {404, error_body("no route " + path)};
}

class WsConn;

struct Service::Impl {
  Session& session;
  net::io_context ioc;
  tcp::acceptor acceptor;
  std::vector<std::thread> io_threads;
  std::thread loop;
  std::atomic<bool> stop{false};
  mutable std::mutex subs_mutex;
  std::vector<std::weak_ptr<WsConn>> subs;

  Impl(Session& s, const std::string& host, int port)
      : session(s), acceptor(ioc, tcp::endpoint(net::ip::make_address(host), static_cast<unsigned short>(port))) {}

  void accept();
  void broadcast(std::shared_ptr<const std::string> frame);
  void run_loop();
};

class WsConn : public std::enable_shared_from_this<WsConn> {
 public:
  WsConn(tcp::socket&& socket, Service::Impl& svc) : ws_(std::move(socket)), svc_(svc) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WsConn::on_accept, shared_from_this()));
  }

  // Keeps at most one frame queued behind the one being written.
  void send(std::shared_ptr<const std::string> msg) {
    net::post(ws_.get_executor(), [self = shared_from_this(), msg] {
      if (self->closed_) return;
      if (self->queue_.size() >= 2) self->queue_.back() = msg;
      else self->queue_.push_back(msg);
      if (self->queue_.size() == 1) self->write();
    });
  }

  void close() {
    net::post(ws_.get_executor(), [self = shared_from_this()] {
      if (self->closed_) return;
      self->closed_ = true;
      beast::error_code ec;
      beast::get_lowest_layer(self->ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
      beast::get_lowest_layer(self->ws_).socket().close(ec);
    });
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    {
      std::lock_guard lock(svc_.subs_mutex);
      svc_.subs.push_back(weak_from_this());
    }
    read();
  }

  void read() {
    ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        return;
      }
      self->in_.consume(self->in_.size());
      self->read();
    });
  }

  void write() {
    ws_.text(true);
    ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->queue_.clear();
        return;
      }
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  Service::Impl& svc_;
  beast::flat_buffer in_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  bool closed_ = false;
};

class HttpConn : public std::enable_shared_from_this<HttpConn> {
 public:
  HttpConn(tcp::socket&& socket, Service::Impl& svc) : stream_(std::move(socket)), svc_(svc) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpConn::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/telemetry") {
        stream_.expires_never();
        std::make_shared<WsConn>(stream_.release_socket(), svc_)->run(std::move(req_));
        return;
      }
    }
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->set(http::field::content_type, "application/json");
    res->set(http::field::access_control_allow_origin, "*");
    if (req_.method() == http::verb::options) {
      res->result(http::status::no_content);
      res->set(http::field::access_control_allow_methods, "GET, POST, OPTIONS");
      res->set(http::field::access_control_allow_headers, "Content-Type");
    } else {
      const HttpReply r = handle_api(svc_.session, std::string(req_.method_string()), std::string(req_.target()),
                                     req_.body());
      res->result(static_cast<http::status>(r.status));
      res->body() = r.body;
    }
    res->keep_alive(req_.keep_alive());
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!res->keep_alive()) {
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  Service::Impl& svc_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

void Service::Impl::accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    std::make_shared<HttpConn>(std::move(socket), *this)->run();
    accept();
  });
}

void Service::Impl::broadcast(std::shared_ptr<const std::string> frame) {
  std::lock_guard lock(subs_mutex);
  std::erase_if(subs, [](const std::weak_ptr<WsConn>& w) { return w.expired(); });
  for (auto& w : subs)
    if (auto s = w.lock()) s->send(frame);
}

void Service::Impl::run_loop() {
  using clock = std::chrono::steady_clock;
  const auto step = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(session.config().sim_dt));
  auto next = clock::now();
  long ticks = 0;
  while (!stop.load()) {
    session.tick();
    if (++ticks % session.config().telemetry_divisor == 0)
      broadcast(std::make_shared<const std::string>(session.frame().to_json()));
    next += step;
    const auto now = clock::now();
    if (next < now - 10 * step) next = now;  // fell far behind: resync instead of bursting
    std::this_thread::sleep_until(next);
  }
}

Service::Service(Session& session, const std::string& host, int port)
    : impl_(std::make_unique<Impl>(session, host, port)) {}

Service::~Service() { stop(); }

int Service::port() const { return impl_->acceptor.local_endpoint().port(); }

std::size_t Service::subscribers() const {
  std::lock_guard lock(impl_->subs_mutex);
  std::size_t n = 0;
  for (const auto& w : impl_->subs) n += !w.expired();
  return n;
}

void Service::start() {
  if (running_.exchange(true)) return;
  impl_->accept();
  for (int i = 0; i < 2; ++i) impl_->io_threads.emplace_back([this] { impl_->ioc.run(); });
  impl_->loop = std::thread([this] { impl_->run_loop(); });
}

void Service::stop() {
  if (!running_.exchange(false)) return;
  impl_->stop = true;
  if (impl_->loop.joinable()) impl_->loop.join();
  net::post(impl_->ioc, [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
  });
  {
    std::lock_guard lock(impl_->subs_mutex);
    for (auto& w : impl_->subs)
      if (auto s = w.lock()) s->close();
  }
  impl_->ioc.stop();
  for (auto& t : impl_->io_threads) t.join();
  impl_->io_threads.clear();
  impl_->session.drain();
}

}  // namespace langdrive
