#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

// Eigen before httplib: <resolv.h> (via httplib) defines a `_res` macro
// that breaks Eigen's product kernels if they are parsed afterwards.
#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include "vadnet/annotation_store.hpp"
#include "vadnet/dataset.hpp"
#include "vadnet/png.hpp"
#include "vadnet/vad.hpp"

namespace vadnet {

struct ServiceConfig {
    std::vector<FaceImage> images;
    std::set<std::size_t> excluded;
    std::string cors_origin = "*";
    std::optional<std::filesystem::path> static_dir;
    // Consistency rule applied by /api/stats.
    std::size_t min_annotators = 1;
    int max_spread = 1;
    std::function<std::int64_t()> clock = [] {
        return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
            .count();
    };
};

/// Transport-neutral request/response so routes can be exercised without
/// sockets; mount() adapts them onto cpp-httplib.
struct ApiRequest {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::string body;
};

struct ApiResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;

    nlohmann::json json() const { return nlohmann::json::parse(body); }
};

inline nlohmann::json record_json(const AnnotationRecord& rec) {
    return {{"image_index", rec.image_index},
            {"annotator_id", rec.annotator_id},
            {"v", static_cast<int>(rec.triple.v)},
            {"a", static_cast<int>(rec.triple.a)},
            {"d", static_cast<int>(rec.triple.d)},
            {"timestamp", rec.timestamp},
            {"reviewed", rec.reviewed}};
}

class AnnotationService {
public:
    AnnotationService(ServiceConfig config, AnnotationStore& store) : config_(std::move(config)), store_(store) {
        for (std::size_t i = 0; i < config_.images.size(); ++i) {
            if (!by_index_.emplace(config_.images[i].index, i).second) {
                throw Error(ErrorKind::Duplicate, "image index " + std::to_string(config_.images[i].index) + " repeated");
            }
        }
        for (const auto& [index, pos] : by_index_)
            if (!config_.excluded.contains(index)) queue_.push_back(index);
    }

    ApiResponse handle(const ApiRequest& req) const {
        try {
            if (req.method == "OPTIONS") return {204, "text/plain", ""};
            if (req.method == "GET" && req.path == "/api/next") return next(req);
            if (req.method == "GET" && req.path.starts_with("/api/image/")) return image(req.path.substr(11));
            if (req.method == "POST" && req.path == "/api/annotation") return annotate(req.body);
            if (req.method == "GET" && req.path == "/api/reference") return reference();
            if (req.method == "GET" && req.path == "/api/progress") return progress(req);
            if (req.method == "GET" && req.path == "/api/stats") return stats();
            if (req.method == "GET" && req.path == "/api/export") return export_csv();
            return error(404, "not-found", "no route for " + req.method + " " + req.path);
        } catch (const std::exception& e) {
            return error(500, "internal", e.what());
        }
    }

    /// Registers every /api route (and the optional static UI) on `server`.
    void mount(httplib::Server& server) const {
        const std::string origin = config_.cors_origin;
        server.set_default_headers({{"Access-Control-Allow-Origin", origin},
                                    {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                    {"Access-Control-Allow-Headers", "Content-Type"}});
        auto adapt = [this](const httplib::Request& in, httplib::Response& out) {
            ApiRequest req{in.method, in.path, {}, in.body};
            for (const auto& [k, v] : in.params) req.query.emplace(k, v);
            const ApiResponse res = handle(req);
            out.status = res.status;
            out.set_content(res.body, res.content_type);
        };
        server.Get(R"(/api/.*)", adapt);
        server.Post(R"(/api/.*)", adapt);
        server.Options(R"(/api/.*)", adapt);
        if (config_.static_dir) server.set_mount_point("/", config_.static_dir->string());
    }

    std::size_t annotatable_count() const { return queue_.size(); }

private:
    static ApiResponse json_response(int status, const nlohmann::json& body) { return {status, "application/json", body.dump()}; }

    static ApiResponse error(int status, const std::string& code, const std::string& message) {
        return json_response(status, {{"error", code}, {"message", message}});
    }

    static std::optional<std::string> annotator_param(const ApiRequest& req) {
        const auto it = req.query.find("annotator");
        if (it == req.query.end() || !valid_annotator_id(it->second)) return std::nullopt;
        return it->second;
    }

    nlohmann::json progress_json(const std::string& annotator) const {
        std::size_t labeled = 0;
        for (std::size_t index : store_.labeled_by(annotator)) labeled += by_index_.contains(index) && !config_.excluded.contains(index);
        return {{"annotator", annotator}, {"labeled", labeled}, {"total", queue_.size()}};
    }

    ApiResponse next(const ApiRequest& req) const {
        const auto annotator = annotator_param(req);
        if (!annotator) return error(400, "bad-request", "query parameter 'annotator' is required");
        const std::set<std::size_t> done = store_.labeled_by(*annotator);
        nlohmann::json body{{"progress", progress_json(*annotator)}};
        for (std::size_t index : queue_) {
            if (done.contains(index)) continue;
            body["done"] = false;
            body["image"] = {{"index", index},
                             {"url", "/api/image/" + std::to_string(index)},
                             {"width", kImageSide},
                             {"height", kImageSide}};
            return json_response(200, body);
        }
        body["done"] = true;
        return json_response(200, body);
    }

    ApiResponse image(const std::string& text) const {
        const auto index = detail::parse_int<std::size_t>(text);
        const auto it = index ? by_index_.find(*index) : by_index_.end();
        if (it == by_index_.end()) return error(404, "unknown-image", "no image '" + text + "'");
        const FaceImage& img = config_.images[it->second];
        return {200, "image/png", encode_png_gray8(img.pixels, kImageSide, kImageSide)};
    }

    ApiResponse annotate(const std::string& text) const {
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error&) {
            return error(400, "bad-request", "body is not valid JSON");
        }
        if (!body.is_object()) return error(400, "bad-request", "body must be a JSON object");
        for (const char* field : {"image_index", "annotator_id", "v", "a", "d"}) {
            if (!body.contains(field)) return error(400, "bad-request", std::string("missing field '") + field + "'");
        }
        if (!body["image_index"].is_number_unsigned()) return error(400, "bad-request", "image_index must be a non-negative integer");
        if (!body["annotator_id"].is_string() || !valid_annotator_id(body["annotator_id"].get<std::string>())) {
            return error(400, "bad-request", "annotator_id must be a non-empty string without commas or control characters");
        }
        if (body.contains("overwrite") && !body["overwrite"].is_boolean()) {
            return error(400, "bad-request", "overwrite must be a boolean");
        }
        VadTriple triple;
        double* slots[] = {&triple.v, &triple.a, &triple.d};
        const char* names[] = {"v", "a", "d"};
        for (int k = 0; k < 3; ++k) {
            const auto& value = body[names[k]];
            if (!value.is_number()) return error(400, "bad-request", std::string(names[k]) + " must be a number");
            *slots[k] = value.get<double>();
        }
        if (!triple.annotation_grade()) {
            return error(422, "out-of-scale", "v, a, d must each be one of -2, -1, 0, 1, 2");
        }
        const auto index = body["image_index"].get<std::size_t>();
        if (!by_index_.contains(index)) return error(404, "unknown-image", "no image " + std::to_string(index));

        AnnotationRecord rec{index, body["annotator_id"].get<std::string>(), triple, config_.clock(), false};
        const auto result = store_.put(rec, body.value("overwrite", false));
        switch (result.status) {
            case AnnotationStore::PutStatus::Conflict:
                return json_response(409, {{"error", "duplicate"},
                                           {"message", "already annotated; resend with \"overwrite\": true to replace"},
                                           {"existing", record_json(result.record)}});
            case AnnotationStore::PutStatus::Replaced:
                return json_response(200, {{"record", record_json(result.record)}, {"replaced", true}});
            case AnnotationStore::PutStatus::Created:
                break;
        }
        return json_response(201, {{"record", record_json(result.record)}, {"replaced", false}});
    }

    static ApiResponse reference() {
        nlohmann::json anchors = nlohmann::json::array();
        for (EmotionCategory e : kEmotionCategories) {
            const VadTriple t = emotion_to_vad(e);
            anchors.push_back({{"emotion", emotion_name(e)}, {"v", t.v}, {"a", t.a}, {"d", t.d}});
        }
        nlohmann::json definitions;
        for (Dimension d : kDimensions) definitions[std::string(dimension_name(d))] = dimension_definition(d);
        return json_response(200, {{"anchors", anchors}, {"definitions", definitions}, {"scale", kScale}});
    }

    ApiResponse progress(const ApiRequest& req) const {
        const auto annotator = annotator_param(req);
        if (!annotator) return error(400, "bad-request", "query parameter 'annotator' is required");
        return json_response(200, progress_json(*annotator));
    }

    ApiResponse stats() const {
        const auto records = store_.records();
        const auto outcomes = consistency_filter(records, config_.min_annotators, config_.max_spread);
        std::vector<VadTriple> labels;
        for (const auto& [index, label] : accepted_labels(outcomes)) labels.push_back(label);
        const VadDistribution table = vad_distribution(labels);
        nlohmann::json distribution;
        for (std::size_t k = 0; k < 3; ++k) distribution[std::string(dimension_name(kDimensions[k]))] = table[k];
        return json_response(200, {{"records", records.size()},
                                   {"images_annotated", outcomes.size()},
                                   {"accepted", labels.size()},
                                   {"rejected", outcomes.size() - labels.size()},
                                   {"values", kScale},
                                   {"distribution", distribution},
                                   {"min_annotators", config_.min_annotators},
                                   {"max_spread", config_.max_spread}});
    }

    ApiResponse export_csv() const {
        std::ostringstream out;
        store_.export_csv(out);
        return {200, "text/csv", out.str()};
    }

    ServiceConfig config_;
    AnnotationStore& store_;
    std::map<std::size_t, std::size_t> by_index_;
    std::vector<std::size_t> queue_;  // non-excluded indices, ascending
};

}  // namespace vadnet
