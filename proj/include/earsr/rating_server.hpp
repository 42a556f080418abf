#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "earsr/rating.hpp"

namespace httplib {
class Server;
}

namespace earsr::rating {

struct ServerOptions {
  std::size_t compact_every = 200;  // submissions between compactions, 0 = never
};

// HTTP front end over every study directory under `root`:
//   GET  /study/:id/next?rater=R   blinded trial payload or {"done":true}
//   POST /study/:id/rating         {"v":1,"rater","trial_id","candidate","criterion","score"[,"idempotency_key"]}
//   GET  /study/:id/report         unblinded report; needs "Authorization: Bearer <token>" or ?token=
//   GET  /assets/:name             content-hashed PNG
class Server {
 public:
  explicit Server(std::filesystem::path root, ServerOptions opts = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds to an ephemeral port when port is 0; returns the bound port or -1.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called.
  bool serve();
  void stop();
  bool running() const;

 private:
  Study& study(const std::string& id);

  std::filesystem::path root_;
  ServerOptions opts_;
  std::unique_ptr<httplib::Server> http_;
  std::mutex studies_mu_;
  std::map<std::string, std::unique_ptr<Study>> studies_;
  std::map<std::string, std::size_t> since_compact_;
};

}  // namespace earsr::rating
